//! The SB-TRPO epoch loop: collect, estimate, mix, line search, update.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use crate::env::{exact_policy_eval, Env, GridLayout, HazardGrid, PointCircle2D, PointGoal2D, PolicyValues};
use crate::error::{Error, Result};
use crate::estimators::{estimate_gradients, surrogate_value, Signal};
use crate::policy::{act_distribution, kl_mean, policy_init, FisherOperator, Head, ParamVector, PolicySpec};
use crate::rollout::{advantages, collect, stream_seed, EpisodeStats, EpisodeWindow};
use crate::trust::{
    angle_deg, line_search, safety_bias_mix, trust_region_step, Direction, TrustStepConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Grid,
    PointGoal,
    PointCircle,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Grid => "grid",
            EnvKind::PointGoal => "point_goal",
            EnvKind::PointCircle => "point_circle",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "grid" => Ok(EnvKind::Grid),
            "point_goal" => Ok(EnvKind::PointGoal),
            "point_circle" => Ok(EnvKind::PointCircle),
            other => Err(Error::Config(format!("unknown env: {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    /// Layout file for [`EnvKind::Grid`]; the built-in 5x5 grid when absent.
    pub grid_file: Option<PathBuf>,
    /// Episode cap; each environment's default when absent.
    pub horizon: Option<usize>,
    pub hidden_sizes: Vec<usize>,
    pub trust: TrustStepConfig,
    pub gamma: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub n_envs: usize,
    pub seed: u64,
    pub whiten_reward_adv: bool,
    /// CSV log destination; no log is written when absent.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Grid,
            grid_file: None,
            horizon: None,
            hidden_sizes: vec![64, 64],
            trust: TrustStepConfig::default(),
            gamma: 0.99,
            epochs: 300,
            steps_per_epoch: 2000,
            n_envs: 4,
            seed: 0,
            whiten_reward_adv: true,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.trust.validate()?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if self.steps_per_epoch == 0 || self.n_envs == 0 {
            return Err(Error::Config("steps_per_epoch and n_envs must be positive".into()));
        }
        if !self.steps_per_epoch.is_multiple_of(self.n_envs) {
            return Err(Error::Config("steps_per_epoch must be a multiple of n_envs".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden_sizes must be non-empty and positive".into()));
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.grid_file.is_some() && self.env != EnvKind::Grid {
            return Err(Error::Config("grid_file only applies to env = grid".into()));
        }
        Ok(())
    }

    /// The hazard grid described by this config, if it selects one.
    pub fn hazard_grid(&self) -> Result<Option<HazardGrid>> {
        if self.env != EnvKind::Grid {
            return Ok(None);
        }
        let default = HazardGrid::default_layout(self.gamma);
        let layout = match &self.grid_file {
            Some(path) => GridLayout::load(path)?,
            None => default.layout,
        };
        HazardGrid::new(layout, self.gamma, self.horizon.unwrap_or(default.horizon)).map(Some)
    }

    pub fn make_envs(&self) -> Result<Vec<Box<dyn Env>>> {
        let grid = self.hazard_grid()?;
        (0..self.n_envs)
            .map(|_| -> Result<Box<dyn Env>> {
                Ok(match self.env {
                    EnvKind::Grid => Box::new(grid.as_ref().expect("grid config").env()?),
                    EnvKind::PointGoal => {
                        let mut env = PointGoal2D::default();
                        if let Some(h) = self.horizon {
                            env.horizon = h;
                        }
                        Box::new(env)
                    }
                    EnvKind::PointCircle => {
                        let mut env = PointCircle2D::default();
                        if let Some(h) = self.horizon {
                            env.horizon = h;
                        }
                        Box::new(env)
                    }
                })
            })
            .collect()
    }

    pub fn policy_spec(&self) -> Result<PolicySpec> {
        let hidden = self.hidden_sizes.clone();
        match self.env {
            EnvKind::Grid => {
                let grid = self.hazard_grid()?.expect("grid config");
                PolicySpec::new(grid.mdp.n_states, grid.mdp.n_actions, hidden, Head::Categorical)
            }
            EnvKind::PointGoal => PolicySpec::new(4, 2, hidden, Head::DiagonalGaussian),
            EnvKind::PointCircle => PolicySpec::new(3, 2, hidden, Head::DiagonalGaussian),
        }
    }
}

/// Same configuration with `beta = 1`, which makes every update take the
/// largest first-order cost decrease available in the trust region.
pub fn cpo_mode(cfg: &TrainConfig) -> TrainConfig {
    let mut out = cfg.clone();
    out.trust.beta = 1.0;
    out
}

/// One epoch's diagnostics. Quantities that were never computed (an aborted
/// epoch, no completed episodes yet, zero vectors for angles) are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub epoch: usize,
    pub mean_reward: Option<f64>,
    pub mean_cost: Option<f64>,
    pub safety_probability: Option<f64>,
    pub safe_reward: Option<f64>,
    pub mu: Option<f64>,
    pub eps: Option<f64>,
    pub alpha: f64,
    pub accepted: bool,
    pub kl_after: f64,
    pub gr_dot_delta: Option<f64>,
    pub gc_dot_delta: Option<f64>,
    /// `<g_c, delta_c>` of the pure cost step.
    pub gc_dot_delta_c: Option<f64>,
    pub angle_delta_gr_deg: Option<f64>,
    pub angle_delta_gc_deg: Option<f64>,
    pub error: Option<String>,
}

impl StepReport {
    fn empty(epoch: usize) -> Self {
        Self {
            epoch,
            mean_reward: None,
            mean_cost: None,
            safety_probability: None,
            safe_reward: None,
            mu: None,
            eps: None,
            alpha: 0.0,
            accepted: false,
            kl_after: 0.0,
            gr_dot_delta: None,
            gc_dot_delta: None,
            gc_dot_delta_c: None,
            angle_delta_gr_deg: None,
            angle_delta_gc_deg: None,
            error: None,
        }
    }
}

/// Angles in degrees between `delta` and each gradient; `None` when a vector
/// has zero norm.
pub fn angle_diagnostics(delta: &[f64], g_r: &[f64], g_c: &[f64]) -> (Option<f64>, Option<f64>) {
    (angle_deg(delta, g_r), angle_deg(delta, g_c))
}

/// Everything one epoch consumed and produced.
#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub params: ParamVector,
    pub report: StepReport,
    pub episodes: Vec<EpisodeStats>,
    /// The collected batch with advantages, for post-hoc checks.
    pub batch: Option<crate::rollout::Batch>,
}

/// Runs one SB-TRPO update. Numerical failures abort the update and are
/// recorded in the report with the parameters unchanged; other errors
/// propagate.
pub fn sbtrpo_epoch(
    params: &ParamVector,
    envs: &mut [Box<dyn Env>],
    spec: &PolicySpec,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochOutcome> {
    let mut report = StepReport::empty(epoch);
    let seed = stream_seed(cfg.seed, epoch as u64);
    let (mut batch, episodes) = collect(envs, params, spec, cfg.steps_per_epoch, cfg.gamma, seed)?;
    let (adv_r, adv_c) = advantages(&batch, cfg.whiten_reward_adv);
    batch.adv_r = adv_r;
    batch.adv_c = adv_c;

    match update(params, &batch, spec, &cfg.trust, &mut report) {
        Ok(next) => Ok(EpochOutcome {
            params: next,
            report,
            episodes,
            batch: Some(batch),
        }),
        Err(Error::Numerical(msg)) => {
            report.accepted = false;
            report.alpha = 0.0;
            report.kl_after = 0.0;
            report.error = Some(msg);
            Ok(EpochOutcome {
                params: params.clone(),
                report,
                episodes,
                batch: Some(batch),
            })
        }
        Err(e) => Err(e),
    }
}

fn update(
    params: &ParamVector,
    batch: &crate::rollout::Batch,
    spec: &PolicySpec,
    trust: &TrustStepConfig,
    report: &mut StepReport,
) -> Result<ParamVector> {
    let grads = estimate_gradients(batch, params, spec)?;
    let fisher = FisherOperator::new(params, spec, &batch.obs, &batch.actions)?;
    let apply = |v: &[f64]| fisher.apply(v, trust.tikhonov);
    let delta_r = trust_region_step(apply, &grads.g_r, trust.eps_kl, trust, Direction::Ascent)?;
    let delta_c = trust_region_step(apply, &grads.g_c, trust.eps_kl, trust, Direction::Descent)?;
    let mix = safety_bias_mix(&grads.g_r, &grads.g_c, &delta_r, &delta_c, trust);
    report.mu = Some(mix.mu);
    report.eps = Some(mix.eps);
    report.gr_dot_delta = Some(mix.gr_dot_delta);
    report.gc_dot_delta = Some(mix.gc_dot_delta);
    report.gc_dot_delta_c = Some(mix.gc_dot_delta_c);
    let (ar, ac) = angle_diagnostics(&mix.delta, &grads.g_r, &grads.g_c);
    report.angle_delta_gr_deg = ar;
    report.angle_delta_gc_deg = ac;

    let ls = line_search(
        |alpha| kl_mean(params, &params.stepped(alpha, &mix.delta), spec, &batch.obs),
        |alpha| surrogate_value(batch, params, &params.stepped(alpha, &mix.delta), spec, Signal::Cost),
        trust,
    );
    report.accepted = ls.accepted;
    report.alpha = ls.alpha;
    if !ls.accepted {
        return Ok(params.clone());
    }
    let next = params.stepped(ls.alpha, &mix.delta);
    report.kl_after = kl_mean(params, &next, spec, &batch.obs)?;
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub spec: PolicySpec,
    pub reports: Vec<StepReport>,
    pub params: ParamVector,
}

/// A failed run together with everything logged before the failure.
#[derive(Debug, Clone)]
pub struct RunError {
    pub error: Error,
    pub log: Option<Box<RunLog>>,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(error: Error) -> Self {
        Self { error, log: None }
    }
}

pub const CSV_HEADER: &str =
    "epoch,mean_reward,mean_cost,safety_prob,safe_reward,mu,eps,alpha,accepted,kl_after,angle_gr_deg,angle_gc_deg";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

pub fn csv_row(r: &StepReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.epoch,
        opt(r.mean_reward),
        opt(r.mean_cost),
        opt(r.safety_probability),
        opt(r.safe_reward),
        opt(r.mu),
        opt(r.eps),
        format_float(r.alpha),
        r.accepted,
        format_float(r.kl_after),
        opt(r.angle_delta_gr_deg),
        opt(r.angle_delta_gc_deg),
    )
}

fn write_line(out: &mut Option<BufWriter<File>>, line: &str) -> Result<()> {
    if let Some(w) = out {
        writeln!(w, "{line}")?;
        w.flush()?;
    }
    Ok(())
}

/// Runs `cfg.epochs` epochs from `policy_init(spec, cfg.seed)`. Episode
/// metrics in each report cover the most recent 50 completed episodes.
pub fn train(cfg: &TrainConfig) -> std::result::Result<RunLog, RunError> {
    cfg.validate()?;
    let spec = cfg.policy_spec()?;
    let mut envs = cfg.make_envs()?;
    let mut log = RunLog {
        params: policy_init(&spec, cfg.seed),
        spec,
        reports: Vec::with_capacity(cfg.epochs),
    };
    let fail = |error: Error, log: &RunLog| RunError {
        error,
        log: Some(Box::new(log.clone())),
    };
    let mut out = match &cfg.log_path {
        Some(path) => Some(BufWriter::new(File::create(path).map_err(|e| fail(e.into(), &log))?)),
        None => None,
    };
    write_line(&mut out, CSV_HEADER).map_err(|e| fail(e, &log))?;
    let mut window = EpisodeWindow::default();
    for epoch in 0..cfg.epochs {
        let outcome = sbtrpo_epoch(&log.params, &mut envs, &log.spec, cfg, epoch).map_err(|e| fail(e, &log))?;
        window.extend(&outcome.episodes);
        let mut report = outcome.report;
        if let Some(m) = window.metrics() {
            report.mean_reward = Some(m.mean_reward);
            report.mean_cost = Some(m.mean_cost);
            report.safety_probability = Some(m.safety_probability);
            report.safe_reward = Some(m.safe_reward);
        }
        log.params = outcome.params;
        log.reports.push(report);
        write_line(&mut out, &csv_row(log.reports.last().expect("just pushed"))).map_err(|e| fail(e, &log))?;
    }
    Ok(log)
}

/// Action probabilities of a categorical policy at every one-hot state.
pub fn induced_tabular_policy(params: &[f64], spec: &PolicySpec) -> Result<Vec<Vec<f64>>> {
    (0..spec.obs_dim)
        .map(|s| {
            let mut obs = vec![0.0; spec.obs_dim];
            obs[s] = 1.0;
            act_distribution(params, spec, &obs)?
                .probs()
                .ok_or_else(|| Error::Input("tabular evaluation needs a categorical policy".into()))
        })
        .collect()
}

/// Exact discounted reward and cost of the policy on the configured grid.
pub fn exact_grid_values(cfg: &TrainConfig, params: &[f64], spec: &PolicySpec) -> Result<PolicyValues> {
    let grid = cfg
        .hazard_grid()?
        .ok_or_else(|| Error::Input("exact evaluation needs a tabular environment".into()))?;
    exact_policy_eval(&grid.mdp, &induced_tabular_policy(params, spec)?)
}
