//! Safety-biased trust region policy optimisation (SB-TRPO) for hard,
//! zero-cost constrained MDPs.
//!
//! Each update mixes a KL-bounded reward step and a KL-bounded cost step so
//! that a fixed fraction `beta` of the best available first-order cost
//! reduction is always secured; whatever trust-region budget is left goes to
//! reward. `beta = 1` recovers a CPO-style update.

pub mod config;
pub mod env;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod policy;
pub mod rollout;
pub mod trainer;
pub mod trust;

pub use error::{Error, Result};
