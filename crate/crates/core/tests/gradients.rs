mod common;

use common::*;
use sbtrpo::estimators::{surrogate_grad, surrogate_value, Signal};
use sbtrpo::linalg::dot;
use sbtrpo::policy::{
    kl_mean, kl_mean_grad, log_prob, log_prob_grad, FisherOperator, Head, PolicySpec,
};

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

fn random_params(rng: &mut rand_chacha::ChaCha8Rng, spec: &PolicySpec) -> Vec<f64> {
    uniform(rng, spec.param_dim(), 0.8)
}

#[test]
fn log_prob_grad_matches_finite_differences() {
    let mut r = rng(1);
    for case in 0..100 {
        let head = if case % 2 == 0 { Head::DiagonalGaussian } else { Head::Categorical };
        let spec = small_spec(head);
        let params = random_params(&mut r, &spec);
        let obs = uniform(&mut r, spec.obs_dim, 1.5);
        let action = random_action(&mut r, &spec);
        let analytic = log_prob_grad(&params, &spec, &obs, &action).unwrap();
        let numeric = central_diff(|p| log_prob(p, &spec, &obs, &action).unwrap(), &params, 1e-5);
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-5, "case {case}: relative error {err}");
    }
}

#[test]
fn surrogate_grad_is_the_derivative_of_the_surrogate() {
    let mut r = rng(2);
    for case in 0..20 {
        let head = if case % 2 == 0 { Head::DiagonalGaussian } else { Head::Categorical };
        let spec = small_spec(head);
        let params = random_params(&mut r, &spec);
        let batch = random_batch(&mut r, &spec, 30);
        for signal in [Signal::Reward, Signal::Cost] {
            let g = surrogate_grad(&batch, &params, &spec, signal).unwrap();
            for _ in 0..5 {
                let d = uniform(&mut r, spec.param_dim(), 1.0);
                let h = 1e-5;
                let at = |t: f64| {
                    let p: Vec<f64> = params.iter().zip(&d).map(|(p, d)| p + t * d).collect();
                    surrogate_value(&batch, &params, &p, &spec, signal).unwrap()
                };
                let numeric = (at(h) - at(-h)) / (2.0 * h);
                let analytic = dot(&g, &d);
                let err = (analytic - numeric).abs() / numeric.abs().max(1e-8);
                assert!(err < 1e-4, "case {case}: {analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn kl_gradient_vanishes_at_identity_and_matches_differences() {
    let mut r = rng(3);
    for head in [Head::DiagonalGaussian, Head::Categorical] {
        let spec = small_spec(head);
        let old = random_params(&mut r, &spec);
        let obs = uniform(&mut r, 10 * spec.obs_dim, 1.5);
        let at_old = kl_mean_grad(&old, &old, &spec, &obs).unwrap();
        assert!(at_old.iter().all(|g| g.abs() < 1e-12));
        assert_eq!(kl_mean(&old, &old, &spec, &obs).unwrap(), 0.0);

        let new: Vec<f64> = old.iter().zip(uniform(&mut r, old.len(), 0.3)).map(|(a, b)| a + b).collect();
        let analytic = kl_mean_grad(&old, &new, &spec, &obs).unwrap();
        let numeric = central_diff(|p| kl_mean(&old, p, &spec, &obs).unwrap(), &new, 1e-5);
        assert!(rel_err(&analytic, &numeric) < 1e-5);
    }
}

/// The Fisher matrix is the Hessian of the KL divergence at the identity, a
/// route independent of the score outer products the operator uses.
#[test]
fn fisher_matches_kl_hessian_for_exact_expectations() {
    let mut r = rng(4);
    let spec = small_spec(Head::Categorical);
    let params = random_params(&mut r, &spec);
    // one copy of every action per observation, weighted by its probability,
    // gives the exact expectation over actions.
    let states: Vec<Vec<f64>> = (0..4).map(|_| uniform(&mut r, spec.obs_dim, 1.5)).collect();
    let v = uniform(&mut r, spec.param_dim(), 1.0);
    let mut fv = vec![0.0; spec.param_dim()];
    for s in &states {
        let probs = sbtrpo::policy::act_distribution(&params, &spec, s).unwrap().probs().unwrap();
        for (a, p) in probs.iter().enumerate() {
            let op = FisherOperator::new(&params, &spec, s, &[a as f64]).unwrap();
            let part = op.apply(&v, 0.0).unwrap();
            for (f, x) in fv.iter_mut().zip(part) {
                *f += p * x / states.len() as f64;
            }
        }
    }
    let obs: Vec<f64> = states.concat();
    let h = 1e-5;
    let shifted = |t: f64| -> Vec<f64> { params.iter().zip(&v).map(|(p, d)| p + t * d).collect() };
    let hv: Vec<f64> = kl_mean_grad(&params, &shifted(h), &spec, &obs)
        .unwrap()
        .iter()
        .zip(kl_mean_grad(&params, &shifted(-h), &spec, &obs).unwrap().iter())
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    let err = rel_err(&fv, &hv);
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn gaussian_mean_shift_doubles_surrogate_weight() {
    // single sample at a = mean with log_std lowered by ln 2: the density at
    // the mean doubles, so the surrogate equals 2 * advantage.
    let spec = PolicySpec::new(1, 1, vec![1], Head::DiagonalGaussian).unwrap();
    let old = vec![0.0; spec.param_dim()];
    let mut new = old.clone();
    *new.last_mut().unwrap() = -std::f64::consts::LN_2;
    let mut r = rng(5);
    let mut batch = random_batch(&mut r, &spec, 1);
    batch.obs = vec![0.3];
    batch.actions = vec![0.0];
    batch.adv_r = vec![1.7];
    let v = surrogate_value(&batch, &old, &new, &spec, Signal::Reward).unwrap();
    assert!((v - 3.4).abs() < 1e-12);
}
