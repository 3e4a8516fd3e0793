#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sbtrpo::policy::{Head, PolicySpec};
use sbtrpo::rollout::Batch;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn small_spec(head: Head) -> PolicySpec {
    match head {
        Head::DiagonalGaussian => PolicySpec::new(3, 2, vec![5, 4], head).unwrap(),
        Head::Categorical => PolicySpec::new(3, 3, vec![5, 4], head).unwrap(),
    }
}

pub fn random_action(rng: &mut ChaCha8Rng, spec: &PolicySpec) -> Vec<f64> {
    match spec.head {
        Head::DiagonalGaussian => uniform(rng, spec.act_dim, 2.0),
        Head::Categorical => vec![rng.random_range(0..spec.act_dim) as f64],
    }
}

/// A batch of `n` random transitions with random advantages, all one episode.
pub fn random_batch(rng: &mut ChaCha8Rng, spec: &PolicySpec, n: usize) -> Batch {
    let mut obs = Vec::new();
    let mut actions = Vec::new();
    for _ in 0..n {
        obs.extend(uniform(rng, spec.obs_dim, 1.5));
        actions.extend(random_action(rng, spec));
    }
    Batch {
        obs_dim: spec.obs_dim,
        action_width: spec.action_width(),
        obs,
        actions,
        rewards: vec![0.0; n],
        costs: vec![0.0; n],
        log_prob_old: vec![0.0; n],
        episode_starts: vec![0],
        completed: vec![false],
        ret_r: vec![0.0; n],
        ret_c: vec![0.0; n],
        adv_r: uniform(rng, n, 1.0),
        adv_c: uniform(rng, n, 1.0),
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}
