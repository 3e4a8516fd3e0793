use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or out-of-range input to a pure function.
    #[error("input error: {0}")]
    Input(String),
    /// A numerical stage produced a non-finite or otherwise unusable value.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// An environment was driven in an invalid state (e.g. stepped after `done`).
    #[error("state error: {0}")]
    State(String),
    /// No strictly safe policy exists for the environment.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// The analytic QP oracle was called outside its non-degenerate case.
    #[error("degenerate instance: {0}")]
    Degenerate(String),
    /// Invalid configuration document or override.
    #[error("config error: {0}")]
    Config(String),
    /// I/O failure, carried as a message so the error stays `Clone`.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
