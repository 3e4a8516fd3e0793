//! Surrogate gradients and sampled surrogate values.

use crate::error::{Error, Result};
use crate::linalg::group_rows;
use crate::policy::{act_distribution, joined_rows, log_prob_grad, ParamVector, PolicySpec};
use crate::rollout::Batch;

/// Log-ratios above this mark a probe far outside any trust region.
const MAX_LOG_RATIO: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Reward,
    Cost,
}

fn advantage(batch: &Batch, signal: Signal) -> Result<&[f64]> {
    let adv = match signal {
        Signal::Reward => &batch.adv_r,
        Signal::Cost => &batch.adv_c,
    };
    if adv.len() != batch.len() {
        return Err(Error::Input("batch advantages have not been computed".into()));
    }
    Ok(adv)
}

/// `(1/N) sum_t grad log pi(a_t | s_t) * A_t`, evaluated at `params`.
///
/// Timesteps sharing an (observation, action) pair share one score
/// evaluation.
pub fn surrogate_grad(batch: &Batch, params: &[f64], spec: &PolicySpec, signal: Signal) -> Result<ParamVector> {
    let adv = advantage(batch, signal)?;
    let n = batch.len();
    let mut grad = ParamVector::zeros(spec.param_dim());
    if n == 0 {
        return Ok(grad);
    }
    let pairs = joined_rows(&batch.obs, batch.obs_dim, &batch.actions, batch.action_width);
    let (firsts, group_of) = group_rows(&pairs, batch.obs_dim + batch.action_width);
    let mut weight = vec![0.0; firsts.len()];
    for (g, a) in group_of.iter().zip(adv) {
        weight[*g] += a;
    }
    for (&t, w) in firsts.iter().zip(weight) {
        if w == 0.0 {
            continue;
        }
        let score = log_prob_grad(params, spec, batch.obs_row(t), batch.action_row(t))?;
        let coef = w / n as f64;
        for (g, s) in grad.iter_mut().zip(score.iter()) {
            *g += coef * s;
        }
    }
    Ok(grad)
}

/// Log-probabilities of the batch actions under `params`, with one forward
/// pass per distinct observation.
pub fn batch_log_probs(batch: &Batch, params: &[f64], spec: &PolicySpec) -> Result<Vec<f64>> {
    let (firsts, group_of) = group_rows(&batch.obs, batch.obs_dim);
    let dists = firsts
        .iter()
        .map(|&t| act_distribution(params, spec, batch.obs_row(t)))
        .collect::<Result<Vec<_>>>()?;
    group_of
        .iter()
        .enumerate()
        .map(|(t, &g)| dists[g].log_prob(batch.action_row(t)))
        .collect()
}

/// Importance-weighted surrogate `(1/N) sum_t exp(logp_new - logp_old) * A_t`
/// (the constant `J(old)` offset is omitted).
pub fn surrogate_value(
    batch: &Batch,
    params_old: &[f64],
    params_new: &[f64],
    spec: &PolicySpec,
    signal: Signal,
) -> Result<f64> {
    let adv = advantage(batch, signal)?;
    if batch.is_empty() {
        return Err(Error::Input("surrogate of an empty batch".into()));
    }
    let old = batch_log_probs(batch, params_old, spec)?;
    let new = batch_log_probs(batch, params_new, spec)?;
    let mut total = 0.0;
    for ((lo, ln), a) in old.iter().zip(&new).zip(adv) {
        let log_ratio = ln - lo;
        if !(log_ratio <= MAX_LOG_RATIO) {
            return Err(Error::Numerical(format!(
                "importance log-ratio {log_ratio} exceeds {MAX_LOG_RATIO}"
            )));
        }
        total += log_ratio.exp() * a;
    }
    Ok(total / batch.len() as f64)
}

/// Reward and cost surrogate gradients at the data-collecting parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub g_r: ParamVector,
    pub g_c: ParamVector,
}

pub fn estimate_gradients(batch: &Batch, params: &[f64], spec: &PolicySpec) -> Result<GradientEstimate> {
    let g_r = surrogate_grad(batch, params, spec, Signal::Reward)?;
    let g_c = surrogate_grad(batch, params, spec, Signal::Cost)?;
    if !(g_r.iter().all(|v| v.is_finite()) && g_c.iter().all(|v| v.is_finite())) {
        return Err(Error::Numerical("non-finite surrogate gradient".into()));
    }
    Ok(GradientEstimate { g_r, g_c })
}
