//! Flat `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Absent keys keep their defaults.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::{EnvKind, TrainConfig};

pub const KEYS: &[&str] = &[
    "env",
    "grid_file",
    "horizon",
    "hidden_sizes",
    "gamma",
    "target_kl",
    "beta",
    "cg_iters",
    "cg_tol",
    "tikhonov",
    "eps_div",
    "step_fraction",
    "max_backtracks",
    "epochs",
    "steps_per_epoch",
    "n_envs",
    "seed",
    "whiten_reward_adv",
    "log_path",
];

fn typed<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

/// Applies one setting to `cfg`.
pub fn set_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let value = value.trim();
    match key {
        "env" => cfg.env = EnvKind::parse(value)?,
        "grid_file" => cfg.grid_file = (!value.is_empty()).then(|| PathBuf::from(value)),
        "horizon" => cfg.horizon = if value.is_empty() { None } else { Some(typed(key, value)?) },
        "hidden_sizes" => {
            cfg.hidden_sizes = value
                .split(',')
                .map(|v| typed(key, v.trim()))
                .collect::<Result<_>>()?
        }
        "gamma" => cfg.gamma = typed(key, value)?,
        "target_kl" => cfg.trust.eps_kl = typed(key, value)?,
        "beta" => cfg.trust.beta = typed(key, value)?,
        "cg_iters" => cfg.trust.cg_iters = typed(key, value)?,
        "cg_tol" => cfg.trust.cg_tol = typed(key, value)?,
        "tikhonov" => cfg.trust.tikhonov = typed(key, value)?,
        "eps_div" => cfg.trust.eps_div = typed(key, value)?,
        "step_fraction" => cfg.trust.step_fraction = typed(key, value)?,
        "max_backtracks" => cfg.trust.max_backtracks = typed(key, value)?,
        "epochs" => cfg.epochs = typed(key, value)?,
        "steps_per_epoch" => cfg.steps_per_epoch = typed(key, value)?,
        "n_envs" => cfg.n_envs = typed(key, value)?,
        "seed" => cfg.seed = typed(key, value)?,
        "whiten_reward_adv" => cfg.whiten_reward_adv = typed(key, value)?,
        "log_path" => cfg.log_path = (!value.is_empty()).then(|| PathBuf::from(value)),
        other => return Err(Error::Config(format!("unknown key: {other}"))),
    }
    Ok(())
}

fn split_pair(line: &str) -> Result<(&str, &str)> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
    Ok((k.trim(), v.trim()))
}

/// Parses a config document over the defaults, then applies `overrides`
/// (each `key=value`), which win over the document.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = split_pair(line)?;
        set_key(&mut cfg, k, v)?;
    }
    for o in overrides {
        let (k, v) = split_pair(o)?;
        set_key(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file. A relative `grid_file` is resolved
/// against the config file's directory.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse_config_str(&text, overrides)?;
    if let (Some(grid), Some(dir)) = (&cfg.grid_file, path.parent()) {
        if grid.is_relative() {
            cfg.grid_file = Some(dir.join(grid));
        }
    }
    Ok(cfg)
}

/// Serialises every setting; `parse_config_str(&write_config(c), &[]) == c`.
pub fn write_config(cfg: &TrainConfig) -> String {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    let hidden: Vec<String> = cfg.hidden_sizes.iter().map(usize::to_string).collect();
    let t = &cfg.trust;
    let pairs = [
        ("env", cfg.env.name().to_string()),
        ("grid_file", path(&cfg.grid_file)),
        ("horizon", cfg.horizon.map(|h| h.to_string()).unwrap_or_default()),
        ("hidden_sizes", hidden.join(",")),
        ("gamma", cfg.gamma.to_string()),
        ("target_kl", t.eps_kl.to_string()),
        ("beta", t.beta.to_string()),
        ("cg_iters", t.cg_iters.to_string()),
        ("cg_tol", t.cg_tol.to_string()),
        ("tikhonov", t.tikhonov.to_string()),
        ("eps_div", t.eps_div.to_string()),
        ("step_fraction", t.step_fraction.to_string()),
        ("max_backtracks", t.max_backtracks.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("steps_per_epoch", cfg.steps_per_epoch.to_string()),
        ("n_envs", cfg.n_envs.to_string()),
        ("seed", cfg.seed.to_string()),
        ("whiten_reward_adv", cfg.whiten_reward_adv.to_string()),
        ("log_path", path(&cfg.log_path)),
    ];
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
