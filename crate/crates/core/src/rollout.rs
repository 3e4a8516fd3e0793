//! On-policy batch collection with Monte-Carlo returns (no critics).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::Env;
use crate::error::{Error, Result};
use crate::policy::{act_distribution, PolicySpec};

/// Collected transitions, row-major per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs_dim: usize,
    pub action_width: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub log_prob_old: Vec<f64>,
    /// Index of the first step of every episode segment, ascending.
    pub episode_starts: Vec<usize>,
    /// Whether each segment ended its episode (terminated or truncated)
    /// rather than being cut off at the end of the batch.
    pub completed: Vec<bool>,
    pub ret_r: Vec<f64>,
    pub ret_c: Vec<f64>,
    pub adv_r: Vec<f64>,
    pub adv_c: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_row(&self, t: usize) -> &[f64] {
        &self.obs[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action_row(&self, t: usize) -> &[f64] {
        &self.actions[t * self.action_width..(t + 1) * self.action_width]
    }

    /// Half-open step ranges of each episode segment.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.episode_starts.iter().enumerate().map(move |(i, &s)| {
            let end = self.episode_starts.get(i + 1).copied().unwrap_or(self.len());
            (s, end)
        })
    }
}

/// Totals of one completed episode (terminated or truncated at the horizon).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub reward: f64,
    pub cost: f64,
    pub length: usize,
}

/// Deterministic per-stream seed derivation (splitmix64 finaliser).
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Segment {
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    costs: Vec<f64>,
    log_prob: Vec<f64>,
    starts: Vec<usize>,
    completed: Vec<bool>,
    episodes: Vec<EpisodeStats>,
}

fn run_worker(
    env: &mut dyn Env,
    params: &[f64],
    spec: &PolicySpec,
    steps: usize,
    seed: u64,
) -> Result<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seg = Segment {
        obs: Vec::with_capacity(steps * spec.obs_dim),
        actions: Vec::with_capacity(steps * spec.action_width()),
        rewards: Vec::with_capacity(steps),
        costs: Vec::with_capacity(steps),
        log_prob: Vec::with_capacity(steps),
        starts: vec![0],
        completed: Vec::new(),
        episodes: Vec::new(),
    };
    let mut obs = env.reset(rng.random());
    let (mut ep_reward, mut ep_cost, mut ep_len) = (0.0, 0.0, 0usize);
    for t in 0..steps {
        let dist = act_distribution(params, spec, &obs)?;
        let action = dist.sample(&mut rng);
        seg.log_prob.push(dist.log_prob(&action)?);
        let out = env.step(&action)?;
        seg.obs.extend_from_slice(&obs);
        seg.actions.extend_from_slice(&action);
        seg.rewards.push(out.reward);
        seg.costs.push(out.cost);
        ep_reward += out.reward;
        ep_cost += out.cost;
        ep_len += 1;
        obs = out.obs;
        if out.done || out.truncated {
            seg.episodes.push(EpisodeStats {
                reward: ep_reward,
                cost: ep_cost,
                length: ep_len,
            });
            (ep_reward, ep_cost, ep_len) = (0.0, 0.0, 0);
            seg.completed.push(true);
            if t + 1 < steps {
                seg.starts.push(t + 1);
                obs = env.reset(rng.random());
            }
        }
    }
    if seg.completed.len() < seg.starts.len() {
        seg.completed.push(false);
    }
    Ok(seg)
}

/// Collects exactly `n_steps` transitions split evenly over `envs`. Every env
/// is reset at the start; episodes still running at the end contribute
/// transitions but no [`EpisodeStats`]. Worker segments are merged in env
/// order, so the batch depends only on `(params, seed, envs.len())`.
pub fn collect(
    envs: &mut [Box<dyn Env>],
    params: &[f64],
    spec: &PolicySpec,
    n_steps: usize,
    gamma: f64,
    seed: u64,
) -> Result<(Batch, Vec<EpisodeStats>)> {
    if envs.is_empty() || !n_steps.is_multiple_of(envs.len()) {
        return Err(Error::Input(format!(
            "{n_steps} steps cannot be split evenly over {} envs",
            envs.len()
        )));
    }
    let per_env = n_steps / envs.len();
    let segments: Vec<Segment> = envs
        .par_iter_mut()
        .enumerate()
        .map(|(i, env)| run_worker(env.as_mut(), params, spec, per_env, stream_seed(seed, i as u64)))
        .collect::<Result<_>>()?;

    let mut batch = Batch {
        obs_dim: spec.obs_dim,
        action_width: spec.action_width(),
        obs: Vec::with_capacity(n_steps * spec.obs_dim),
        actions: Vec::with_capacity(n_steps * spec.action_width()),
        rewards: Vec::with_capacity(n_steps),
        costs: Vec::with_capacity(n_steps),
        log_prob_old: Vec::with_capacity(n_steps),
        episode_starts: Vec::new(),
        completed: Vec::new(),
        ret_r: Vec::new(),
        ret_c: Vec::new(),
        adv_r: Vec::new(),
        adv_c: Vec::new(),
    };
    let mut episodes = Vec::new();
    for seg in segments {
        let offset = batch.len();
        batch.episode_starts.extend(seg.starts.iter().map(|s| s + offset));
        batch.completed.extend(seg.completed);
        batch.obs.extend(seg.obs);
        batch.actions.extend(seg.actions);
        batch.rewards.extend(seg.rewards);
        batch.costs.extend(seg.costs);
        batch.log_prob_old.extend(seg.log_prob);
        episodes.extend(seg.episodes);
    }
    for (start, end) in batch.segments().collect::<Vec<_>>() {
        batch.ret_r.extend(mc_returns(&batch.rewards[start..end], gamma));
        batch.ret_c.extend(mc_returns(&batch.costs[start..end], gamma));
    }
    Ok((batch, episodes))
}

/// Discounted returns-to-go, `G_t = x_t + gamma * G_{t+1}` with `G` past the
/// end taken as 0.
pub fn mc_returns(values: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let mut acc = 0.0;
    for (o, x) in out.iter_mut().zip(values).rev() {
        acc = x + gamma * acc;
        *o = acc;
    }
    out
}

fn centered(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - mean).collect()
}

/// Mean-centred returns. Reward advantages are optionally divided by
/// `(std + 1e-8)`; cost advantages are never rescaled.
pub fn advantages(batch: &Batch, whiten: bool) -> (Vec<f64>, Vec<f64>) {
    let mut adv_r = centered(&batch.ret_r);
    if whiten && !adv_r.is_empty() {
        let std = (adv_r.iter().map(|a| a * a).sum::<f64>() / adv_r.len() as f64).sqrt();
        for a in &mut adv_r {
            *a /= std + 1e-8;
        }
    }
    (adv_r, centered(&batch.ret_c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Fraction of episodes with zero total cost.
    pub safety_probability: f64,
    /// Mean return with every cost-incurring episode counted as 0.
    pub safe_reward: f64,
    pub mean_reward: f64,
    pub mean_cost: f64,
    pub episodes: usize,
}

pub fn episode_metrics(stats: &[EpisodeStats]) -> Result<Metrics> {
    if stats.is_empty() {
        return Err(Error::Input("no completed episodes".into()));
    }
    let n = stats.len() as f64;
    let safe = stats.iter().filter(|s| s.cost == 0.0);
    Ok(Metrics {
        safety_probability: safe.clone().count() as f64 / n,
        safe_reward: safe.map(|s| s.reward).sum::<f64>() / n,
        mean_reward: stats.iter().map(|s| s.reward).sum::<f64>() / n,
        mean_cost: stats.iter().map(|s| s.cost).sum::<f64>() / n,
        episodes: stats.len(),
    })
}

/// Trailing window of the most recent completed episodes.
#[derive(Debug, Clone)]
pub struct EpisodeWindow {
    capacity: usize,
    episodes: VecDeque<EpisodeStats>,
}

impl EpisodeWindow {
    pub const DEFAULT_CAPACITY: usize = 50;

    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity),
        }
    }

    pub fn extend(&mut self, stats: &[EpisodeStats]) {
        for s in stats {
            if self.episodes.len() == self.capacity {
                self.episodes.pop_front();
            }
            self.episodes.push_back(*s);
        }
    }

    pub fn metrics(&self) -> Option<Metrics> {
        let all: Vec<EpisodeStats> = self.episodes.iter().copied().collect();
        episode_metrics(&all).ok()
    }
}

impl Default for EpisodeWindow {
    fn default() -> Self {
        Self::new(Self::DEFAULT_CAPACITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{HazardGrid, PointGoal2D};
    use crate::policy::{log_prob, policy_init, Head};

    fn ep(reward: f64, cost: f64) -> EpisodeStats {
        EpisodeStats { reward, cost, length: 1 }
    }

    #[test]
    fn returns_by_hand() {
        assert_eq!(mc_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(mc_returns(&[3.0, -1.0, 2.0], 0.0), vec![3.0, -1.0, 2.0]);
        assert_eq!(mc_returns(&[0.0; 4], 0.99), vec![0.0; 4]);
    }

    #[test]
    fn metrics_formulas() {
        let m = episode_metrics(&[ep(1.0, 0.0), ep(2.0, 3.0), ep(3.0, 0.0)]).unwrap();
        assert!((m.safety_probability - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.safe_reward - 4.0 / 3.0).abs() < 1e-15);
        let all_safe = episode_metrics(&[ep(1.0, 0.0), ep(4.0, 0.0)]).unwrap();
        assert_eq!((all_safe.safety_probability, all_safe.safe_reward), (1.0, all_safe.mean_reward));
        let none_safe = episode_metrics(&[ep(1.0, 1.0), ep(4.0, 2.0)]).unwrap();
        assert_eq!((none_safe.safety_probability, none_safe.safe_reward), (0.0, 0.0));
        assert!(matches!(episode_metrics(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn window_keeps_most_recent() {
        let mut w = EpisodeWindow::new(2);
        assert!(w.metrics().is_none());
        w.extend(&[ep(1.0, 1.0), ep(2.0, 0.0), ep(4.0, 0.0)]);
        let m = w.metrics().unwrap();
        assert_eq!(m.episodes, 2);
        assert_eq!(m.mean_reward, 3.0);
    }

    fn batch_with_returns(ret_r: Vec<f64>, ret_c: Vec<f64>) -> Batch {
        Batch {
            obs_dim: 1,
            action_width: 1,
            obs: vec![0.0; ret_r.len()],
            actions: vec![0.0; ret_r.len()],
            rewards: ret_r.clone(),
            costs: ret_c.clone(),
            log_prob_old: vec![0.0; ret_r.len()],
            episode_starts: vec![0],
            completed: vec![false],
            ret_r,
            ret_c,
            adv_r: vec![],
            adv_c: vec![],
        }
    }

    #[test]
    fn advantage_centering_and_whitening() {
        let (r, c) = advantages(&batch_with_returns(vec![2.0; 5], vec![1.0; 5]), true);
        assert!(r.iter().chain(&c).all(|&a| a == 0.0));

        let b = batch_with_returns(vec![1.0, 4.0, -2.0, 0.5], vec![0.0, 3.0, 1.0, 0.0]);
        let (r, c) = advantages(&b, true);
        let std = (r.iter().map(|a| a * a).sum::<f64>() / r.len() as f64).sqrt();
        assert!((std - 1.0).abs() < 1e-6);
        assert_eq!(c, vec![-1.0, 2.0, 0.0, -1.0]);
        let (r_raw, _) = advantages(&b, false);
        assert_eq!(r_raw, vec![0.125, 3.125, -2.875, -0.375]);

        let (r, c) = advantages(&batch_with_returns(vec![7.0], vec![3.0]), true);
        assert_eq!((r, c), (vec![0.0], vec![0.0]));
    }

    #[test]
    fn collect_bookkeeping_and_determinism() {
        let grid = HazardGrid::default_layout(0.99);
        let spec = PolicySpec::new(25, 4, vec![16, 16], Head::Categorical).unwrap();
        let params = policy_init(&spec, 3);
        let make = || -> Vec<Box<dyn Env>> {
            (0..4).map(|_| Box::new(grid.env().unwrap()) as Box<dyn Env>).collect()
        };
        let (b1, e1) = collect(&mut make(), &params, &spec, 100, 0.99, 42).unwrap();
        let (b2, e2) = collect(&mut make(), &params, &spec, 100, 0.99, 42).unwrap();
        assert_eq!(b1.len(), 100);
        assert_eq!(b1, b2);
        assert_eq!(e1, e2);
        for w in 0..4 {
            assert!(b1.episode_starts.contains(&(w * 25)));
        }
        for t in 0..b1.len() {
            let lp = log_prob(&params, &spec, b1.obs_row(t), b1.action_row(t)).unwrap();
            assert!((lp - b1.log_prob_old[t]).abs() <= 1e-12);
        }
        assert!(collect(&mut make(), &params, &spec, 102, 0.99, 42).is_err());
    }

    #[test]
    fn returns_recurse_within_segments() {
        let spec = PolicySpec::new(4, 2, vec![8], Head::DiagonalGaussian).unwrap();
        let params = policy_init(&spec, 0);
        let mut envs: Vec<Box<dyn Env>> = vec![
            Box::new(PointGoal2D::default()),
            Box::new(PointGoal2D::default()),
        ];
        let (b, episodes) = collect(&mut envs, &params, &spec, 600, 0.9, 7).unwrap();
        for (start, end) in b.segments() {
            for t in start..end - 1 {
                let expect = b.rewards[t] + 0.9 * b.ret_r[t + 1];
                assert!((b.ret_r[t] - expect).abs() < 1e-12);
            }
            assert_eq!(b.ret_r[end - 1], b.rewards[end - 1]);
            assert_eq!(b.ret_c[end - 1], b.costs[end - 1]);
        }
        assert_eq!(b.completed.len(), b.episode_starts.len());
        assert_eq!(b.completed.iter().filter(|c| **c).count(), episodes.len());
        let completed: f64 = episodes.iter().map(|e| e.reward).sum();
        let attributed: f64 = b
            .segments()
            .zip(&b.completed)
            .filter(|(_, done)| **done)
            .map(|((s, e), _)| b.rewards[s..e].iter().sum::<f64>())
            .sum();
        assert!((completed - attributed).abs() < 1e-9);
        assert!(episodes.iter().all(|e| e.cost >= 0.0));
    }
}
