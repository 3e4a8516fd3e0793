//! Continuous 2-D point-mass tasks with sparse binary costs.
//!
//! The action is a velocity in `[-1, 1]^2` (components are clipped) applied
//! for one step of size `0.1`. Positions are kept inside a square arena.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, Env, StepOutcome};
use crate::error::{Error, Result};

const STEP_SIZE: f64 = 0.1;
const ARENA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        dist(p, self.center) <= self.radius
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn velocity(action: &[f64]) -> Result<[f64; 2]> {
    match action {
        [x, y] if x.is_finite() && y.is_finite() => Ok([x.clamp(-1.0, 1.0), y.clamp(-1.0, 1.0)]),
        _ => Err(Error::Input(format!("expected a finite 2-D action, got {action:?}"))),
    }
}

fn advance(p: [f64; 2], v: [f64; 2]) -> [f64; 2] {
    [
        (p[0] + STEP_SIZE * v[0]).clamp(-ARENA, ARENA),
        (p[1] + STEP_SIZE * v[1]).clamp(-ARENA, ARENA),
    ]
}

/// Reach a goal disc while avoiding hazard discs. Reward is the decrease in
/// distance to the goal centre; each step that ends inside a hazard costs 1.
///
/// Observation: `[x, y, goal_x - x, goal_y - y]`.
#[derive(Debug, Clone)]
pub struct PointGoal2D {
    pub goal: Circle,
    pub hazards: Vec<Circle>,
    pub start_center: [f64; 2],
    /// Start positions are drawn uniformly from `start_center ± start_spread`.
    pub start_spread: f64,
    pub horizon: usize,
    position: [f64; 2],
    steps: usize,
    live: bool,
}

impl Default for PointGoal2D {
    fn default() -> Self {
        Self::new(
            Circle { center: [1.5, 1.5], radius: 0.3 },
            vec![
                Circle { center: [0.0, 0.0], radius: 0.5 },
                Circle { center: [-0.5, 1.0], radius: 0.4 },
                Circle { center: [1.0, -0.5], radius: 0.4 },
            ],
            [-1.5, -1.5],
            0.25,
            200,
        )
    }
}

impl PointGoal2D {
    pub fn new(
        goal: Circle,
        hazards: Vec<Circle>,
        start_center: [f64; 2],
        start_spread: f64,
        horizon: usize,
    ) -> Self {
        Self {
            goal,
            hazards,
            start_center,
            start_spread,
            horizon,
            position: start_center,
            steps: 0,
            live: false,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    fn obs(&self) -> Vec<f64> {
        let [x, y] = self.position;
        vec![x, y, self.goal.center[0] - x, self.goal.center[1] - y]
    }

    fn in_hazard(&self, p: [f64; 2]) -> bool {
        self.hazards.iter().any(|h| h.contains(p))
    }
}

impl Env for PointGoal2D {
    fn obs_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box { dim: 2, low: -1.0, high: 1.0 }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spread = self.start_spread.abs();
        let mut draw = |c: f64| {
            if spread > 0.0 {
                c + rng.random_range(-spread..=spread)
            } else {
                c
            }
        };
        let mut p = [draw(self.start_center[0]), draw(self.start_center[1])];
        for _ in 0..100 {
            if !self.in_hazard(p) && !self.goal.contains(p) {
                break;
            }
            p = [draw(self.start_center[0]), draw(self.start_center[1])];
        }
        self.position = p;
        self.steps = 0;
        self.live = true;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if !self.live {
            return Err(Error::State("step called on a finished or unreset episode".into()));
        }
        let v = velocity(action)?;
        let before = dist(self.position, self.goal.center);
        self.position = advance(self.position, v);
        let after = dist(self.position, self.goal.center);
        self.steps += 1;
        let done = after <= self.goal.radius;
        let truncated = !done && self.steps >= self.horizon;
        self.live = !(done || truncated);
        Ok(StepOutcome {
            obs: self.obs(),
            reward: before - after,
            cost: f64::from(self.in_hazard(self.position)),
            done,
            truncated,
        })
    }
}

/// Run circles around the origin. Reward is the tangential displacement
/// `x dy - y dx`, discounted by the distance from the target ring
/// (`/ (1 + |r - target_radius|)`); each step ending beyond
/// `boundary_radius` costs 1.
///
/// Observation: `[x, y, r - target_radius]`.
#[derive(Debug, Clone)]
pub struct PointCircle2D {
    pub target_radius: f64,
    pub boundary_radius: f64,
    pub horizon: usize,
    position: [f64; 2],
    steps: usize,
    live: bool,
}

impl Default for PointCircle2D {
    fn default() -> Self {
        Self::new(1.0, 1.5, 200)
    }
}

impl PointCircle2D {
    pub fn new(target_radius: f64, boundary_radius: f64, horizon: usize) -> Self {
        Self {
            target_radius,
            boundary_radius,
            horizon,
            position: [0.0, 0.0],
            steps: 0,
            live: false,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    fn obs(&self) -> Vec<f64> {
        let [x, y] = self.position;
        vec![x, y, dist(self.position, [0.0, 0.0]) - self.target_radius]
    }
}

impl Env for PointCircle2D {
    fn obs_dim(&self) -> usize {
        3
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box { dim: 2, low: -1.0, high: 1.0 }
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.position = [0.0, 0.0];
        self.steps = 0;
        self.live = true;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if !self.live {
            return Err(Error::State("step called on a finished or unreset episode".into()));
        }
        let v = velocity(action)?;
        let [x, y] = self.position;
        self.position = advance(self.position, v);
        let (dx, dy) = (self.position[0] - x, self.position[1] - y);
        let radius = dist(self.position, [0.0, 0.0]);
        self.steps += 1;
        let truncated = self.steps >= self.horizon;
        self.live = !truncated;
        Ok(StepOutcome {
            obs: self.obs(),
            reward: (x * dy - y * dx) / (1.0 + (radius - self.target_radius).abs()),
            cost: f64::from(radius > self.boundary_radius),
            done: false,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout<E: Env>(env: &mut E, seed: u64, actions: &[[f64; 2]]) -> Vec<(Vec<f64>, f64, f64)> {
        env.reset(seed);
        actions
            .iter()
            .map(|a| {
                let o = env.step(a).unwrap();
                (o.obs, o.reward, o.cost)
            })
            .collect()
    }

    #[test]
    fn goal_start_is_seed_deterministic() {
        let mut env = PointGoal2D::default();
        let a = env.reset(11);
        let b = env.reset(11);
        assert_eq!(a, b);
        assert_ne!(a, env.reset(12));
    }

    #[test]
    fn zero_action_keeps_position() {
        let mut env = PointGoal2D::default();
        env.reset(0);
        let before = env.position();
        let out = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(env.position(), before);
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.cost, f64::from(env.in_hazard(before)));

        // start inside a hazard: cost follows membership
        let mut env = PointGoal2D::new(
            Circle { center: [2.0, 2.0], radius: 0.2 },
            vec![Circle { center: [0.0, 0.0], radius: 1.0 }],
            [0.0, 0.0],
            0.0,
            200,
        );
        env.reset(0);
        let out = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!((out.reward, out.cost), (0.0, 1.0));
    }

    #[test]
    fn goal_terminates_and_horizon_truncates() {
        let mut env = PointGoal2D::new(
            Circle { center: [0.25, 0.0], radius: 0.1 },
            vec![],
            [0.0, 0.0],
            0.0,
            200,
        );
        env.reset(0);
        let out = env.step(&[1.0, 0.0]).unwrap();
        assert!(!out.done);
        assert!((out.reward - 0.1).abs() < 1e-12);
        let out = env.step(&[5.0, 0.0]).unwrap();
        assert!(out.done);
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::State(_))));

        let mut circle = PointCircle2D::new(1.0, 1.5, 3);
        circle.reset(0);
        circle.step(&[0.0, 0.0]).unwrap();
        circle.step(&[0.0, 0.0]).unwrap();
        assert!(circle.step(&[0.0, 0.0]).unwrap().truncated);
        assert!(circle.step(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn circle_starts_at_origin_and_rewards_rotation() {
        let mut env = PointCircle2D::default();
        assert_eq!(env.reset(99), vec![0.0, 0.0, -1.0]);
        for _ in 0..10 {
            env.step(&[1.0, 0.0]).unwrap();
        }
        // at (1, 0): moving +y is counter-clockwise, -y clockwise
        let ccw = env.clone().step(&[0.0, 1.0]).unwrap().reward;
        let cw = env.clone().step(&[0.0, -1.0]).unwrap().reward;
        assert!(ccw > 0.0 && cw < 0.0);
        for _ in 0..6 {
            env.step(&[1.0, 0.0]).unwrap();
        }
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().cost, 1.0);
    }

    #[test]
    fn trajectories_are_bit_reproducible() {
        let actions: Vec<[f64; 2]> = (0..50)
            .map(|i| [(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()])
            .collect();
        let mut goal = PointGoal2D::default();
        assert_eq!(rollout(&mut goal, 5, &actions), rollout(&mut goal, 5, &actions));
        let mut circle = PointCircle2D::default();
        assert_eq!(rollout(&mut circle, 5, &actions), rollout(&mut circle, 5, &actions));
        for (_, _, c) in rollout(&mut goal, 5, &actions) {
            assert!(c == 0.0 || c == 1.0);
        }
    }

    #[test]
    fn bad_actions_rejected() {
        let mut env = PointGoal2D::default();
        env.reset(0);
        assert!(matches!(env.step(&[1.0]), Err(Error::Input(_))));
        assert!(matches!(env.step(&[f64::NAN, 0.0]), Err(Error::Input(_))));
    }
}
