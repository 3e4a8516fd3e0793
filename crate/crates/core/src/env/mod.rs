//! Constrained MDPs with a reward and a non-negative cost signal.

mod grid;
mod point;
mod tabular;

pub use grid::{GridLayout, HazardGrid, DEFAULT_GRID};
pub use point::{Circle, PointCircle2D, PointGoal2D};
pub use tabular::{
    constrained_optimum_oracle, exact_policy_eval, max_kl, performance_bound_check, BoundCheck,
    PolicyValues, SafeOptimum, TabularCMDP, TabularEnv,
};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Actions in `[low, high]^dim`; out-of-range components are clipped by
    /// the environment.
    Box { dim: usize, low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Always `>= 0`.
    pub cost: f64,
    /// Episode reached a terminal state.
    pub done: bool,
    /// Episode hit its horizon without terminating.
    pub truncated: bool,
}

/// A single-owner environment instance. Actions use the policy encoding: a
/// one-element slice holding the index for discrete spaces, the full vector
/// for continuous ones.
pub trait Env: Send {
    fn obs_dim(&self) -> usize;

    fn action_space(&self) -> ActionSpace;

    /// Starts a new episode; the same seed always yields the same start.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Fails with [`Error::State`](crate::Error::State) when called before
    /// `reset` or after the episode ended.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
}
