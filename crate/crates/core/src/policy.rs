//! Stochastic MLP policies over a flat parameter vector.
//!
//! Parameters are laid out layer by layer as a row-major weight matrix
//! (`out x in`) followed by the bias vector. A diagonal Gaussian head appends
//! `act_dim` state-independent log-standard-deviations at the end.
//!
//! Every hidden layer is followed by `tanh`; the output layer is linear.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, group_rows};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    DiagonalGaussian,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub head: Head,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

impl PolicySpec {
    pub fn new(obs_dim: usize, act_dim: usize, hidden_sizes: Vec<usize>, head: Head) -> Result<Self> {
        let spec = Self {
            obs_dim,
            act_dim,
            hidden_sizes,
            head,
            activation: Activation::Tanh,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.act_dim == 0 {
            return Err(Error::Input("policy dimensions must be positive".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Input(
                "hidden_sizes must be non-empty with positive entries".into(),
            ));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<Layer> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(self.obs_dim);
        sizes.extend(&self.hidden_sizes);
        sizes.push(self.act_dim);
        let mut offset = 0;
        sizes
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                layer
            })
            .collect()
    }

    fn log_std_offset(&self) -> usize {
        self.layers()
            .last()
            .map(|l| l.bias + l.outputs)
            .unwrap_or(0)
    }

    /// Total number of parameters.
    pub fn param_dim(&self) -> usize {
        let extra = match self.head {
            Head::DiagonalGaussian => self.act_dim,
            Head::Categorical => 0,
        };
        self.log_std_offset() + extra
    }

    /// Number of reals used to encode one action: the index for a categorical
    /// head, the full vector for a Gaussian head.
    pub fn action_width(&self) -> usize {
        match self.head {
            Head::DiagonalGaussian => self.act_dim,
            Head::Categorical => 1,
        }
    }
}

/// Flat vector of all policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("parameter vector has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `self + alpha * direction`
    pub fn stepped(&self, alpha: f64, direction: &[f64]) -> ParamVector {
        debug_assert_eq!(self.0.len(), direction.len());
        ParamVector(
            self.0
                .iter()
                .zip(direction)
                .map(|(p, d)| p + alpha * d)
                .collect(),
        )
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionDistribution {
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
    Categorical { logits: Vec<f64> },
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn category_index(action: &[f64], n: usize) -> Result<usize> {
    match action {
        [a] if a.fract() == 0.0 && *a >= 0.0 && (*a as usize) < n => Ok(*a as usize),
        _ => Err(Error::Input(format!(
            "categorical action {action:?} is not an index in 0..{n}"
        ))),
    }
}

impl ActionDistribution {
    pub fn probs(&self) -> Option<Vec<f64>> {
        match self {
            ActionDistribution::Categorical { logits } => {
                Some(log_softmax(logits).into_iter().map(f64::exp).collect())
            }
            ActionDistribution::Gaussian { .. } => None,
        }
    }

    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        match self {
            ActionDistribution::Gaussian { mean, log_std } => {
                if action.len() != mean.len() {
                    return Err(Error::Input(format!(
                        "action has {} entries, expected {}",
                        action.len(),
                        mean.len()
                    )));
                }
                Ok(action
                    .iter()
                    .zip(mean)
                    .zip(log_std)
                    .map(|((a, m), ls)| {
                        let z = (a - m) * (-ls).exp();
                        -0.5 * z * z - ls - 0.5 * LN_2PI
                    })
                    .sum())
            }
            ActionDistribution::Categorical { logits } => {
                let k = category_index(action, logits.len())?;
                Ok(log_softmax(logits)[k])
            }
        }
    }

    /// Gradient of `log_prob` with respect to the head outputs (mean or
    /// logits), and for a Gaussian also with respect to the log-stds.
    fn score_at_head(&self, action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            ActionDistribution::Gaussian { mean, log_std } => {
                if action.len() != mean.len() {
                    return Err(Error::Input(format!(
                        "action has {} entries, expected {}",
                        action.len(),
                        mean.len()
                    )));
                }
                let mut d_mean = Vec::with_capacity(mean.len());
                let mut d_log_std = Vec::with_capacity(mean.len());
                for ((a, m), ls) in action.iter().zip(mean).zip(log_std) {
                    let inv_var = (-2.0 * ls).exp();
                    let diff = a - m;
                    d_mean.push(diff * inv_var);
                    d_log_std.push(diff * diff * inv_var - 1.0);
                }
                Ok((d_mean, d_log_std))
            }
            ActionDistribution::Categorical { logits } => {
                let k = category_index(action, logits.len())?;
                let mut d: Vec<f64> = log_softmax(logits).into_iter().map(|l| -l.exp()).collect();
                d[k] += 1.0;
                Ok((d, Vec::new()))
            }
        }
    }

    /// KL(self || other) in closed form.
    pub fn kl(&self, other: &ActionDistribution) -> f64 {
        match (self, other) {
            (
                ActionDistribution::Gaussian { mean: m0, log_std: s0 },
                ActionDistribution::Gaussian { mean: m1, log_std: s1 },
            ) => m0
                .iter()
                .zip(s0)
                .zip(m1.iter().zip(s1))
                .map(|((m0, s0), (m1, s1))| {
                    let var0 = (2.0 * s0).exp();
                    let var1 = (2.0 * s1).exp();
                    s1 - s0 + (var0 + (m0 - m1).powi(2)) / (2.0 * var1) - 0.5
                })
                .sum(),
            (
                ActionDistribution::Categorical { logits: l0 },
                ActionDistribution::Categorical { logits: l1 },
            ) => {
                let lp0 = log_softmax(l0);
                let lp1 = log_softmax(l1);
                lp0.iter()
                    .zip(&lp1)
                    .map(|(a, b)| a.exp() * (a - b))
                    .sum::<f64>()
                    .max(0.0)
            }
            _ => f64::NAN,
        }
    }

    /// Gradient of KL(old || self) with respect to self's head outputs and log-stds.
    fn kl_grad_at_head(&self, old: &ActionDistribution) -> (Vec<f64>, Vec<f64>) {
        match (old, self) {
            (
                ActionDistribution::Gaussian { mean: m0, log_std: s0 },
                ActionDistribution::Gaussian { mean: m1, log_std: s1 },
            ) => {
                let mut d_mean = Vec::with_capacity(m1.len());
                let mut d_log_std = Vec::with_capacity(m1.len());
                for ((m0, s0), (m1, s1)) in m0.iter().zip(s0).zip(m1.iter().zip(s1)) {
                    let inv_var1 = (-2.0 * s1).exp();
                    d_mean.push((m1 - m0) * inv_var1);
                    d_log_std.push(1.0 - ((2.0 * s0).exp() + (m0 - m1).powi(2)) * inv_var1);
                }
                (d_mean, d_log_std)
            }
            (
                ActionDistribution::Categorical { logits: l0 },
                ActionDistribution::Categorical { logits: l1 },
            ) => {
                let d = log_softmax(l1)
                    .iter()
                    .zip(log_softmax(l0))
                    .map(|(p1, p0)| p1.exp() - p0.exp())
                    .collect();
                (d, Vec::new())
            }
            _ => (Vec::new(), Vec::new()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ActionDistribution::Gaussian { mean, log_std } => mean
                .iter()
                .zip(log_std)
                .map(|(m, ls)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + ls.exp() * z
                })
                .collect(),
            ActionDistribution::Categorical { logits } => {
                let probs = self.probs().unwrap_or_default();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = logits.len() - 1;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                vec![pick as f64]
            }
        }
    }
}

/// Deterministic initialisation: weights uniform in `±sqrt(1/fan_in)`, biases
/// and Gaussian log-stds zero.
pub fn policy_init(spec: &PolicySpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.param_dim()];
    for layer in spec.layers() {
        let bound = (1.0 / layer.inputs as f64).sqrt();
        for w in &mut values[layer.weights..layer.bias] {
            *w = rng.random_range(-bound..bound);
        }
    }
    ParamVector(values)
}

struct Forward {
    /// Input followed by each hidden activation.
    activations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

fn check_dims(params: &[f64], spec: &PolicySpec, obs: &[f64]) -> Result<()> {
    if params.len() != spec.param_dim() {
        return Err(Error::Input(format!(
            "parameter vector has dimension {}, expected {}",
            params.len(),
            spec.param_dim()
        )));
    }
    if obs.len() != spec.obs_dim {
        return Err(Error::Input(format!(
            "observation has {} entries, expected {}",
            obs.len(),
            spec.obs_dim
        )));
    }
    if !obs.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("observation has non-finite entries".into()));
    }
    Ok(())
}

fn forward(params: &[f64], spec: &PolicySpec, obs: &[f64]) -> Forward {
    let layers = spec.layers();
    let mut activations = Vec::with_capacity(layers.len());
    let mut x = obs.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let w = &params[layer.weights..layer.bias];
        let b = &params[layer.bias..layer.bias + layer.outputs];
        let mut y: Vec<f64> = (0..layer.outputs)
            .map(|o| b[o] + dot(&w[o * layer.inputs..(o + 1) * layer.inputs], &x))
            .collect();
        if i + 1 < layers.len() {
            for v in &mut y {
                *v = v.tanh();
            }
        }
        activations.push(std::mem::replace(&mut x, y));
    }
    Forward {
        activations,
        output: x,
    }
}

fn head_distribution(params: &[f64], spec: &PolicySpec, output: Vec<f64>) -> ActionDistribution {
    match spec.head {
        Head::DiagonalGaussian => {
            let off = spec.log_std_offset();
            ActionDistribution::Gaussian {
                mean: output,
                log_std: params[off..off + spec.act_dim].to_vec(),
            }
        }
        Head::Categorical => ActionDistribution::Categorical { logits: output },
    }
}

/// Backpropagates a gradient at the network output into `grad` (accumulating
/// with weight `scale`).
fn backward(
    params: &[f64],
    spec: &PolicySpec,
    fwd: &Forward,
    d_output: &[f64],
    d_log_std: &[f64],
    scale: f64,
    grad: &mut [f64],
) {
    let layers = spec.layers();
    let mut delta = d_output.to_vec();
    for (i, layer) in layers.iter().enumerate().rev() {
        let input = &fwd.activations[i];
        for o in 0..layer.outputs {
            let d = scale * delta[o];
            if d != 0.0 {
                let row = &mut grad[layer.weights + o * layer.inputs..layer.weights + (o + 1) * layer.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            grad[layer.bias + o] += d;
        }
        if i == 0 {
            break;
        }
        let w = &params[layer.weights..layer.bias];
        let mut prev = vec![0.0; layer.inputs];
        for (o, d) in delta.iter().enumerate() {
            if *d != 0.0 {
                for (p, wv) in prev.iter_mut().zip(&w[o * layer.inputs..(o + 1) * layer.inputs]) {
                    *p += d * wv;
                }
            }
        }
        // tanh'(z) = 1 - tanh(z)^2, and the stored activation is tanh(z).
        for (p, h) in prev.iter_mut().zip(input) {
            *p *= 1.0 - h * h;
        }
        delta = prev;
    }
    if !d_log_std.is_empty() {
        let off = spec.log_std_offset();
        for (g, d) in grad[off..off + spec.act_dim].iter_mut().zip(d_log_std) {
            *g += scale * d;
        }
    }
}

pub fn act_distribution(params: &[f64], spec: &PolicySpec, obs: &[f64]) -> Result<ActionDistribution> {
    check_dims(params, spec, obs)?;
    let fwd = forward(params, spec, obs);
    Ok(head_distribution(params, spec, fwd.output))
}

pub fn log_prob(params: &[f64], spec: &PolicySpec, obs: &[f64], action: &[f64]) -> Result<f64> {
    act_distribution(params, spec, obs)?.log_prob(action)
}

/// Accumulates `scale * grad log pi(action | obs)` into `grad`.
fn add_score(
    params: &[f64],
    spec: &PolicySpec,
    obs: &[f64],
    action: &[f64],
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    check_dims(params, spec, obs)?;
    let fwd = forward(params, spec, obs);
    let dist = head_distribution(params, spec, fwd.output.clone());
    let (d_out, d_log_std) = dist.score_at_head(action)?;
    backward(params, spec, &fwd, &d_out, &d_log_std, scale, grad);
    Ok(())
}

pub fn log_prob_grad(params: &[f64], spec: &PolicySpec, obs: &[f64], action: &[f64]) -> Result<ParamVector> {
    let mut grad = vec![0.0; spec.param_dim()];
    add_score(params, spec, obs, action, 1.0, &mut grad)?;
    Ok(ParamVector(grad))
}

fn batch_rows(data: &[f64], width: usize, what: &str) -> Result<usize> {
    if width == 0 || !data.len().is_multiple_of(width) {
        return Err(Error::Input(format!(
            "{what} batch length {} is not a multiple of {width}",
            data.len()
        )));
    }
    Ok(data.len() / width)
}

/// Sample-average closed-form KL(old || new) over a flat batch of observations.
pub fn kl_mean(old: &[f64], new: &[f64], spec: &PolicySpec, obs_batch: &[f64]) -> Result<f64> {
    let n = batch_rows(obs_batch, spec.obs_dim, "observation")?;
    if n == 0 {
        return Err(Error::Input("kl_mean needs a non-empty batch".into()));
    }
    if new.len() != old.len() {
        return Err(Error::Input("parameter vectors differ in dimension".into()));
    }
    let (firsts, group_of) = group_rows(obs_batch, spec.obs_dim);
    let mut counts = vec![0usize; firsts.len()];
    for g in group_of {
        counts[g] += 1;
    }
    let mut total = 0.0;
    for (&row, count) in firsts.iter().zip(counts) {
        let obs = &obs_batch[row * spec.obs_dim..(row + 1) * spec.obs_dim];
        let p_old = act_distribution(old, spec, obs)?;
        let p_new = act_distribution(new, spec, obs)?;
        total += count as f64 * p_old.kl(&p_new);
    }
    Ok(total / n as f64)
}

/// Gradient of `kl_mean(old, ., obs_batch)` evaluated at `new`.
pub fn kl_mean_grad(old: &[f64], new: &[f64], spec: &PolicySpec, obs_batch: &[f64]) -> Result<ParamVector> {
    let n = batch_rows(obs_batch, spec.obs_dim, "observation")?;
    if n == 0 {
        return Err(Error::Input("kl_mean_grad needs a non-empty batch".into()));
    }
    let mut grad = vec![0.0; spec.param_dim()];
    for obs in obs_batch.chunks(spec.obs_dim) {
        let p_old = act_distribution(old, spec, obs)?;
        let fwd = forward(new, spec, obs);
        let p_new = head_distribution(new, spec, fwd.output.clone());
        let (d_out, d_log_std) = p_new.kl_grad_at_head(&p_old);
        backward(new, spec, &fwd, &d_out, &d_log_std, 1.0 / n as f64, &mut grad);
    }
    Ok(ParamVector(grad))
}

/// Matrix-free empirical Fisher operator `(1/N) sum_i g_i g_i^T`, with `g_i`
/// the score of sample `i`. Samples sharing the same (observation, action)
/// share one stored score weighted by multiplicity.
#[derive(Debug, Clone)]
pub struct FisherOperator {
    scores: Vec<Vec<f64>>,
    weights: Vec<f64>,
    dim: usize,
}

impl FisherOperator {
    pub fn new(params: &[f64], spec: &PolicySpec, obs_batch: &[f64], actions: &[f64]) -> Result<Self> {
        let n = batch_rows(obs_batch, spec.obs_dim, "observation")?;
        let width = spec.action_width();
        if batch_rows(actions, width, "action")? != n {
            return Err(Error::Input("observation and action batches differ in length".into()));
        }
        if n == 0 {
            return Err(Error::Input("Fisher operator needs a non-empty batch".into()));
        }
        let pairs = joined_rows(obs_batch, spec.obs_dim, actions, width);
        let (firsts, group_of) = group_rows(&pairs, spec.obs_dim + width);
        let mut weights = vec![0.0; firsts.len()];
        for g in group_of {
            weights[g] += 1.0 / n as f64;
        }
        let scores = firsts
            .iter()
            .map(|&i| {
                log_prob_grad(
                    params,
                    spec,
                    &obs_batch[i * spec.obs_dim..(i + 1) * spec.obs_dim],
                    &actions[i * width..(i + 1) * width],
                )
                .map(Vec::from)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scores,
            weights,
            dim: spec.param_dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `F v + damping * v`
    pub fn apply(&self, v: &[f64], damping: f64) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::Input(format!(
                "vector has dimension {}, expected {}",
                v.len(),
                self.dim
            )));
        }
        let mut out: Vec<f64> = v.iter().map(|x| damping * x).collect();
        for (g, w) in self.scores.iter().zip(&self.weights) {
            let coef = w * dot(g, v);
            for (o, gi) in out.iter_mut().zip(g) {
                *o += coef * gi;
            }
        }
        Ok(out)
    }
}

/// Concatenates two row-major matrices column-wise.
pub(crate) fn joined_rows(a: &[f64], a_width: usize, b: &[f64], b_width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks(a_width).zip(b.chunks(b_width)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

pub fn fisher_vector_product(
    params: &[f64],
    spec: &PolicySpec,
    obs_batch: &[f64],
    actions: &[f64],
    v: &[f64],
    damping: f64,
) -> Result<ParamVector> {
    FisherOperator::new(params, spec, obs_batch, actions)?
        .apply(v, damping)
        .map(ParamVector)
}
