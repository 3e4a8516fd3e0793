//! Explicit finite CMDPs and their exact (linear-solve) oracles.
//!
//! Rewards and costs are attached to states and collected on *entering* a
//! state, so the return of an episode `s_0, s_1, ...` is `sum_t gamma^t x(s_{t+1})`.
//! Entering a terminal state ends the episode. This is exactly what
//! [`TabularEnv`] reports step by step, so Monte-Carlo returns and the exact
//! values below estimate the same quantity.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, Env, StepOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularCMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-stochastic kernel, indexed `[s * n_actions + a][s']` in a flat buffer.
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub cost: Vec<f64>,
    pub gamma: f64,
    pub initial_state: usize,
    pub terminal: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyValues {
    pub reward: f64,
    pub cost: f64,
}

impl TabularCMDP {
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return Err(Error::Input("tabular CMDP needs states and actions".into()));
        }
        if self.transition.len() != s * a * s
            || self.reward.len() != s
            || self.cost.len() != s
            || self.terminal.len() != s
        {
            return Err(Error::Input("tabular CMDP arrays have inconsistent sizes".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Input(format!("gamma {} not in [0, 1)", self.gamma)));
        }
        if self.initial_state >= s {
            return Err(Error::Input("initial state out of range".into()));
        }
        for (i, row) in self.transition.chunks(s).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::Input(format!("transition row {i} has invalid entries")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Input(format!("transition row {i} sums to {total}")));
            }
        }
        if self.cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Input("costs must be finite and non-negative".into()));
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Input("rewards must be finite".into()));
        }
        Ok(())
    }

    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        let s = self.n_states;
        let start = (state * self.n_actions + action) * s;
        &self.transition[start..start + s]
    }

    fn continues(&self, state: usize) -> f64 {
        if self.terminal[state] {
            0.0
        } else {
            1.0
        }
    }

    fn check_policy(&self, policy: &[Vec<f64>]) -> Result<()> {
        if policy.len() != self.n_states || policy.iter().any(|r| r.len() != self.n_actions) {
            return Err(Error::Input("policy table has the wrong shape".into()));
        }
        for (s, row) in policy.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Input(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(())
    }

    /// Per-state values of signal `x` under `policy`:
    /// `(I - gamma P_pi) v = r_pi`, where `r_pi(s)` is the expected signal
    /// collected on the next transition and `P_pi` the continuation kernel
    /// (transitions into terminal states do not continue).
    pub fn state_values(&self, policy: &[Vec<f64>], signal: &[f64]) -> Result<Vec<f64>> {
        self.check_policy(policy)?;
        let n = self.n_states;
        let mut m = DMatrix::<f64>::identity(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for s in 0..n {
            if self.terminal[s] {
                continue;
            }
            for (a, &pa) in policy[s].iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for (t, &p) in self.row(s, a).iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    rhs[s] += pa * p * signal[t];
                    m[(s, t)] -= self.gamma * pa * p * self.continues(t);
                }
            }
        }
        let v = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("policy evaluation system is singular".into()))?;
        Ok(v.iter().copied().collect())
    }

    /// `Q(s, a)` from the state values `v` of the same signal.
    pub fn action_values(&self, signal: &[f64], v: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| {
                        if self.terminal[s] {
                            return 0.0;
                        }
                        self.row(s, a)
                            .iter()
                            .enumerate()
                            .map(|(t, p)| p * (signal[t] + self.gamma * self.continues(t) * v[t]))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// Unnormalised discounted state-visitation frequencies from the initial
    /// state, `rho(s) = sum_t gamma^t P(s_t = s)`.
    pub fn visitation(&self, policy: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_policy(policy)?;
        let n = self.n_states;
        // rho^T (I - gamma P_pi) = e_0^T, with P_pi(s, .) zero out of terminal states.
        let mut m = DMatrix::<f64>::identity(n, n);
        for s in 0..n {
            if self.terminal[s] {
                continue;
            }
            for (a, &pa) in policy[s].iter().enumerate() {
                for (t, &p) in self.row(s, a).iter().enumerate() {
                    m[(t, s)] -= self.gamma * pa * p;
                }
            }
        }
        let mut rhs = DVector::<f64>::zeros(n);
        rhs[self.initial_state] = 1.0;
        let rho = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("visitation system is singular".into()))?;
        Ok(rho.iter().copied().collect())
    }
}

/// Exact discounted reward and cost of `policy` from the initial state.
pub fn exact_policy_eval(env: &TabularCMDP, policy: &[Vec<f64>]) -> Result<PolicyValues> {
    env.validate()?;
    let s0 = env.initial_state;
    Ok(PolicyValues {
        reward: env.state_values(policy, &env.reward)?[s0],
        cost: env.state_values(policy, &env.cost)?[s0],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeOptimum {
    pub reward: f64,
    /// Deterministic (one-hot) policy table.
    pub policy: Vec<Vec<f64>>,
}

/// Best strictly safe deterministic policy.
///
/// A state is safe if it has zero cost and some action keeps the whole
/// successor support inside the safe set; only such actions are allowed.
/// Fails with [`Error::Infeasible`] when the initial state admits no safe
/// behaviour, or when no safe policy can collect any positive reward although
/// the environment offers some.
pub fn constrained_optimum_oracle(env: &TabularCMDP) -> Result<SafeOptimum> {
    env.validate()?;
    let (n, na) = (env.n_states, env.n_actions);
    let mut safe: Vec<bool> = env.cost.iter().map(|&c| c == 0.0).collect();
    let allowed = |safe: &[bool], s: usize, a: usize| {
        env.row(s, a)
            .iter()
            .enumerate()
            .all(|(t, &p)| p == 0.0 || safe[t])
    };
    loop {
        let mut changed = false;
        for s in 0..n {
            if safe[s] && !env.terminal[s] && !(0..na).any(|a| allowed(&safe, s, a)) {
                safe[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let s0 = env.initial_state;
    let start_ok = env.terminal[s0] || (0..na).any(|a| allowed(&safe, s0, a));
    if !start_ok {
        return Err(Error::Infeasible(
            "no zero-cost policy exists from the initial state".into(),
        ));
    }

    // Value iteration over allowed actions.
    let mut v = vec![0.0; n];
    let q = |v: &[f64], s: usize, a: usize| -> f64 {
        env.row(s, a)
            .iter()
            .enumerate()
            .map(|(t, p)| p * (env.reward[t] + env.gamma * env.continues(t) * v[t]))
            .sum()
    };
    for _ in 0..1_000_000 {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            if env.terminal[s] {
                continue;
            }
            let best = (0..na)
                .filter(|&a| allowed(&safe, s, a))
                .map(|a| q(&v, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_finite() {
                delta = delta.max((best - v[s]).abs());
                v[s] = best;
            }
        }
        if delta < 1e-14 {
            break;
        }
    }
    let policy: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let mut row = vec![0.0; na];
            let choice = (0..na)
                .filter(|&a| allowed(&safe, s, a))
                .map(|a| (a, q(&v, s, a)))
                .fold(None, |best: Option<(usize, f64)>, (a, val)| match best {
                    Some((_, b)) if b >= val - 1e-12 => best,
                    _ => Some((a, val)),
                })
                .map(|(a, _)| a)
                .unwrap_or(0);
            row[choice] = 1.0;
            row
        })
        .collect();
    let values = exact_policy_eval(env, &policy)?;
    if values.reward <= 0.0 && env.reward.iter().any(|&r| r > 0.0) {
        return Err(Error::Infeasible(
            "no zero-cost policy reaches a rewarding state".into(),
        ));
    }
    Ok(SafeOptimum {
        reward: values.reward,
        policy,
    })
}

fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// `max_s KL(old(.|s) || new(.|s))` over every state.
pub fn max_kl(old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(p, q)| categorical_kl(p, q))
        .fold(0.0, f64::max)
}

/// Exact quantities of the two-sided policy-improvement bound
/// `|L_old(new) - J(new)| <= C * max_s KL(old || new)` for one signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub surrogate: f64,
    pub value: f64,
    pub constant: f64,
    pub max_kl: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        (self.surrogate - self.value).abs() <= self.constant * self.max_kl
    }
}

/// Computes the surrogate `L_old(new) = J(old) + sum_s rho_old(s) sum_a new(a|s) A_old(s, a)`,
/// the true value `J(new)`, and `C = 4 gamma max|A_old| / (1 - gamma)^2`, all exactly.
pub fn performance_bound_check(
    env: &TabularCMDP,
    signal: &[f64],
    old: &[Vec<f64>],
    new: &[Vec<f64>],
) -> Result<BoundCheck> {
    env.validate()?;
    let s0 = env.initial_state;
    let v_old = env.state_values(old, signal)?;
    let q_old = env.action_values(signal, &v_old);
    let rho = env.visitation(old)?;
    let mut max_adv: f64 = 0.0;
    let mut gain = 0.0;
    for s in 0..env.n_states {
        for a in 0..env.n_actions {
            let adv = if env.terminal[s] { 0.0 } else { q_old[s][a] - v_old[s] };
            max_adv = max_adv.max(adv.abs());
            gain += rho[s] * new[s][a] * adv;
        }
    }
    let gamma = env.gamma;
    Ok(BoundCheck {
        surrogate: v_old[s0] + gain,
        value: env.state_values(new, signal)?[s0],
        constant: 4.0 * gamma * max_adv / (1.0 - gamma).powi(2),
        max_kl: max_kl(old, new),
    })
}

/// Episodic simulator over a [`TabularCMDP`] with one-hot observations.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: Arc<TabularCMDP>,
    horizon: usize,
    state: usize,
    steps: usize,
    live: bool,
    rng: ChaCha8Rng,
}

impl TabularEnv {
    pub fn new(mdp: Arc<TabularCMDP>, horizon: usize) -> Result<Self> {
        mdp.validate()?;
        if horizon == 0 {
            return Err(Error::Input("horizon must be positive".into()));
        }
        let state = mdp.initial_state;
        Ok(Self {
            mdp,
            horizon,
            state,
            steps: 0,
            live: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn mdp(&self) -> &TabularCMDP {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn one_hot(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.mdp.n_states];
        obs[self.state] = 1.0;
        obs
    }
}

impl Env for TabularEnv {
    fn obs_dim(&self) -> usize {
        self.mdp.n_states
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.mdp.n_actions)
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = self.mdp.initial_state;
        self.steps = 0;
        self.live = !self.mdp.terminal[self.state];
        self.one_hot()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if !self.live {
            return Err(Error::State("step called on a finished or unreset episode".into()));
        }
        let a = match action {
            [a] if a.fract() == 0.0 && *a >= 0.0 && (*a as usize) < self.mdp.n_actions => *a as usize,
            _ => return Err(Error::Input(format!("invalid discrete action {action:?}"))),
        };
        let row = self.mdp.row(self.state, a);
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut next = row.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        for (t, &p) in row.iter().enumerate() {
            acc += p;
            if p > 0.0 && u < acc {
                next = t;
                break;
            }
        }
        self.state = next;
        self.steps += 1;
        let done = self.mdp.terminal[next];
        let truncated = !done && self.steps >= self.horizon;
        self.live = !(done || truncated);
        Ok(StepOutcome {
            obs: self.one_hot(),
            reward: self.mdp.reward[next],
            cost: self.mdp.cost[next],
            done,
            truncated,
        })
    }
}
