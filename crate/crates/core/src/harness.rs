//! Run, sweep, diagnose and oracle commands behind the CLI.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::env::{constrained_optimum_oracle, exact_policy_eval};
use crate::error::{Error, Result};
use crate::trainer::{exact_grid_values, format_float, train, RunError, RunLog, TrainConfig, CSV_HEADER};

/// Process exit codes of the CLI.
pub mod exit {
    pub const OK: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const INFEASIBLE: i32 = 2;
    pub const CONFIG: i32 = 3;
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => exit::CONFIG,
        Error::Infeasible(_) | Error::Degenerate(_) => exit::INFEASIBLE,
        _ => exit::RUNTIME,
    }
}

/// Replaces the configured seed when `value` (the `SBTRPO_SEED` variable) is set.
pub fn apply_seed_override(cfg: &mut TrainConfig, value: Option<&str>) -> Result<()> {
    if let Some(v) = value {
        cfg.seed = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid SBTRPO_SEED: {v:?}")))?;
    }
    Ok(())
}

/// Final metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub beta: f64,
    pub seed: u64,
    pub epochs: usize,
    pub accepted: usize,
    pub safety_prob: Option<f64>,
    pub safe_reward: Option<f64>,
    pub mean_reward: Option<f64>,
    pub mean_cost: Option<f64>,
    /// Exact discounted values, tabular environments only.
    pub exact_reward: Option<f64>,
    pub exact_cost: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn parse_opt(key: &str, v: &str) -> Result<Option<f64>> {
    if v.is_empty() {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|_| Error::Input(format!("bad number for {key}: {v:?}")))
}

impl RunSummary {
    pub fn from_log(cfg: &TrainConfig, log: &RunLog) -> Result<Self> {
        let last = log.reports.last();
        let exact = match cfg.hazard_grid()? {
            Some(_) => Some(exact_grid_values(cfg, &log.params, &log.spec)?),
            None => None,
        };
        Ok(Self {
            beta: cfg.trust.beta,
            seed: cfg.seed,
            epochs: log.reports.len(),
            accepted: log.reports.iter().filter(|r| r.accepted).count(),
            safety_prob: last.and_then(|r| r.safety_probability),
            safe_reward: last.and_then(|r| r.safe_reward),
            mean_reward: last.and_then(|r| r.mean_reward),
            mean_cost: last.and_then(|r| r.mean_cost),
            exact_reward: exact.map(|v| v.reward),
            exact_cost: exact.map(|v| v.cost),
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "beta = {}\nseed = {}\nepochs = {}\naccepted = {}\nsafety_prob = {}\nsafe_reward = {}\n\
             mean_reward = {}\nmean_cost = {}\nexact_reward = {}\nexact_cost = {}\n",
            format_float(self.beta),
            self.seed,
            self.epochs,
            self.accepted,
            opt(self.safety_prob),
            opt(self.safe_reward),
            opt(self.mean_reward),
            opt(self.mean_cost),
            opt(self.exact_reward),
            opt(self.exact_cost),
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self {
            beta: f64::NAN,
            seed: 0,
            epochs: 0,
            accepted: 0,
            safety_prob: None,
            safe_reward: None,
            mean_reward: None,
            mean_cost: None,
            exact_reward: None,
            exact_cost: None,
        };
        let bad = |k: &str| Error::Input(format!("bad summary value for {k}"));
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("bad summary line {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "beta" => s.beta = v.parse().map_err(|_| bad(k))?,
                "seed" => s.seed = v.parse().map_err(|_| bad(k))?,
                "epochs" => s.epochs = v.parse().map_err(|_| bad(k))?,
                "accepted" => s.accepted = v.parse().map_err(|_| bad(k))?,
                "safety_prob" => s.safety_prob = parse_opt(k, v)?,
                "safe_reward" => s.safe_reward = parse_opt(k, v)?,
                "mean_reward" => s.mean_reward = parse_opt(k, v)?,
                "mean_cost" => s.mean_cost = parse_opt(k, v)?,
                "exact_reward" => s.exact_reward = parse_opt(k, v)?,
                "exact_cost" => s.exact_cost = parse_opt(k, v)?,
                _ => return Err(Error::Input(format!("unknown summary key {k:?}"))),
            }
        }
        Ok(s)
    }
}

pub const LOG_FILE: &str = "log.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const HISTOGRAM_FILE: &str = "angle_hist.csv";

/// Trains with the log written to `out/log.csv` and the final metrics to
/// `out/summary.txt`.
pub fn run_command(cfg: &TrainConfig, out: &Path) -> std::result::Result<RunSummary, RunError> {
    fs::create_dir_all(out).map_err(Error::from)?;
    let mut cfg = cfg.clone();
    cfg.log_path = Some(out.join(LOG_FILE));
    let log = train(&cfg)?;
    let summary = RunSummary::from_log(&cfg, &log).map_err(|error| RunError {
        error,
        log: Some(Box::new(log.clone())),
    })?;
    fs::write(out.join(SUMMARY_FILE), summary.to_text()).map_err(|e| RunError {
        error: e.into(),
        log: Some(Box::new(log)),
    })?;
    Ok(summary)
}

pub const SWEEP_HEADER: &str = "beta,seed,safety_prob,safe_reward,exact_reward,exact_cost";

pub fn sweep_run_dir(out: &Path, beta: f64, seed: u64) -> PathBuf {
    out.join(format!("beta_{beta}_seed_{seed}"))
}

/// One run per `(beta, seed)` pair, in parallel, each in its own directory.
/// The combined table is sorted by `(beta, seed)`.
pub fn sweep_command(
    cfg: &TrainConfig,
    betas: &[f64],
    seeds: &[u64],
    out: &Path,
) -> std::result::Result<Vec<RunSummary>, RunError> {
    if betas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one beta and one seed".into()).into());
    }
    let jobs: Vec<(f64, u64)> = betas
        .iter()
        .flat_map(|&b| seeds.iter().map(move |&s| (b, s)))
        .collect();
    let mut summaries = jobs
        .par_iter()
        .map(|&(beta, seed)| {
            let mut job = cfg.clone();
            job.trust.beta = beta;
            job.seed = seed;
            job.validate()?;
            run_command(&job, &sweep_run_dir(out, beta, seed))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    summaries.sort_by(|a, b| a.beta.total_cmp(&b.beta).then(a.seed.cmp(&b.seed)));
    let mut table = format!("{SWEEP_HEADER}\n");
    for s in &summaries {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{}",
            format_float(s.beta),
            s.seed,
            opt(s.safety_prob),
            opt(s.safe_reward),
            opt(s.exact_reward),
            opt(s.exact_cost)
        );
    }
    fs::write(out.join(SWEEP_FILE), table).map_err(Error::from)?;
    Ok(summaries)
}

pub const BIN_WIDTH_DEG: f64 = 5.0;
pub const N_BINS: usize = 36;

/// Counts per 5-degree bin over `[0, 180]`; 180 falls in the last bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AngleHistogram {
    pub reward: Vec<usize>,
    pub cost: Vec<usize>,
}

fn bin(angle: f64) -> Option<usize> {
    if !(0.0..=180.0).contains(&angle) {
        return None;
    }
    Some(((angle / BIN_WIDTH_DEG) as usize).min(N_BINS - 1))
}

/// Histograms of the `angle_gr_deg` and `angle_gc_deg` columns of a run log.
/// Empty cells are skipped.
pub fn angle_histogram(csv: &str) -> Result<AngleHistogram> {
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != CSV_HEADER {
        return Err(Error::Input("not a run log: unexpected header".into()));
    }
    let cols: Vec<&str> = CSV_HEADER.split(',').collect();
    let gr = cols.iter().position(|c| *c == "angle_gr_deg").expect("column");
    let gc = cols.iter().position(|c| *c == "angle_gc_deg").expect("column");
    let mut hist = AngleHistogram {
        reward: vec![0; N_BINS],
        cost: vec![0; N_BINS],
    };
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Input(format!("log row {} has {} fields", i + 1, fields.len())));
        }
        for (col, counts) in [(gr, &mut hist.reward), (gc, &mut hist.cost)] {
            if fields[col].is_empty() {
                continue;
            }
            let angle: f64 = fields[col]
                .parse()
                .map_err(|_| Error::Input(format!("bad angle {:?} in row {}", fields[col], i + 1)))?;
            let b = bin(angle).ok_or_else(|| Error::Input(format!("angle {angle} outside [0, 180]")))?;
            counts[b] += 1;
        }
    }
    Ok(hist)
}

pub fn histogram_csv(hist: &AngleHistogram) -> String {
    let mut out = String::from("bin_lo_deg,bin_hi_deg,count_gr,count_gc\n");
    for i in 0..N_BINS {
        let lo = i as f64 * BIN_WIDTH_DEG;
        let _ = writeln!(out, "{lo},{},{},{}", lo + BIN_WIDTH_DEG, hist.reward[i], hist.cost[i]);
    }
    out
}

/// Reads a run log and writes `out/angle_hist.csv`.
pub fn diagnose_command(log: &Path, out: &Path) -> Result<AngleHistogram> {
    let text = fs::read_to_string(log)?;
    let hist = angle_histogram(&text)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(HISTOGRAM_FILE), histogram_csv(&hist))?;
    Ok(hist)
}

/// Exact values of the safe optimal policy of a tabular config, as printable text.
pub fn oracle_command(cfg: &TrainConfig) -> Result<String> {
    let grid = cfg
        .hazard_grid()?
        .ok_or_else(|| Error::Config("oracle needs a tabular environment (env = grid)".into()))?;
    let opt = constrained_optimum_oracle(&grid.mdp)?;
    let eval = exact_policy_eval(&grid.mdp, &opt.policy)?;
    Ok(format!(
        "safe_optimum_reward = {}\nsafe_optimum_cost = {}\n",
        format_float(eval.reward),
        format_float(eval.cost)
    ))
}

/// Parses `0..4` (inclusive) or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("invalid seed list: {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

pub fn parse_betas(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let b: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid beta: {s:?}")))?;
            if b > 0.0 && b <= 1.0 {
                Ok(b)
            } else {
                Err(Error::Config(format!("beta {b} outside (0, 1]")))
            }
        })
        .collect()
}
