use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sbtrpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbtrpo"))
        .args(args)
        .env_remove("SBTRPO_SEED")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL: &str = "env = grid\nhidden_sizes = 8\nsteps_per_epoch = 200\nn_envs = 2\nepochs = 3\n";

#[test]
fn run_with_zero_epochs_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.cfg", SMALL);
    let out = dir.path().join("out");
    let res = sbtrpo(&["run", "--config", &cfg, "--set", "epochs=0", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let log = fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.starts_with("epoch,mean_reward,mean_cost,safety_prob,safe_reward,mu,eps"));
    assert!(out.join("summary.txt").exists());
}

#[test]
fn repeated_runs_are_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.cfg", SMALL);
    let logs: Vec<String> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let res = sbtrpo(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
            assert_eq!(res.status.code(), Some(0));
            fs::read_to_string(out.join("log.csv")).unwrap()
        })
        .collect();
    assert_eq!(logs[0].lines().count(), 4);
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn seed_variable_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.cfg", SMALL);
    let out = dir.path().join("o");
    let res = Command::new(env!("CARGO_BIN_EXE_sbtrpo"))
        .args(["run", "--config", &cfg, "--set", "epochs=0", "--out", out.to_str().unwrap()])
        .env("SBTRPO_SEED", "17")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stdout).contains("seed = 17"));
}

#[test]
fn config_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.cfg", "betta = 0.9\n");
    let out = dir.path().join("o");
    let res = sbtrpo(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("unknown key: betta"));
    assert_eq!(sbtrpo(&["run"]).status.code(), Some(3));
    let missing = dir.path().join("nope.cfg");
    let res = sbtrpo(&["oracle", "--config", missing.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn oracle_reports_safe_optimum_and_infeasibility() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.cfg", SMALL);
    let res = sbtrpo(&["oracle", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout).to_string();
    let reward: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("safe_optimum_reward = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((reward - 0.99f64.powi(7)).abs() < 1e-12);

    write(dir.path(), "walled.txt", "S....\n.....\n...HH\n...H.\n...HG\n");
    let cfg = write(dir.path(), "w.cfg", "env = grid\ngrid_file = walled.txt\n");
    let res = sbtrpo(&["oracle", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("infeasible"));
}

#[test]
fn sweep_table_matches_run_summaries() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.cfg", SMALL);
    let out = dir.path().join("sweep");
    let res = sbtrpo(&[
        "sweep", "--config", &cfg, "--beta", "0.6,0.75,0.9", "--seeds", "0..1", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let beta: f64 = f[0].parse().unwrap();
        let summary = fs::read_to_string(out.join(format!("beta_{beta}_seed_{}", f[1])).join("summary.txt")).unwrap();
        let get = |key: &str| {
            summary
                .lines()
                .find_map(|l| l.strip_prefix(&format!("{key} = ")))
                .unwrap()
                .to_string()
        };
        assert_eq!(f[2], get("safety_prob"));
        assert_eq!(f[3], get("safe_reward"));
    }
}

#[test]
fn diagnose_counts_angles() {
    let dir = TempDir::new().unwrap();
    let header = "epoch,mean_reward,mean_cost,safety_prob,safe_reward,mu,eps,alpha,accepted,kl_after,angle_gr_deg,angle_gc_deg";
    let mut text = format!("{header}\n");
    for e in 0..4 {
        text.push_str(&format!("{e},,,,,,,0,false,0,6.0e1,{}\n", if e == 0 { "" } else { "1.2e2" }));
    }
    let log = write(dir.path(), "log.csv", &text);
    let out = dir.path().join("d");
    let res = sbtrpo(&["diagnose", "--log", &log, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let hist = fs::read_to_string(out.join("angle_hist.csv")).unwrap();
    let rows: Vec<&str> = hist.lines().skip(1).collect();
    assert_eq!(rows.len(), 36);
    assert_eq!(rows[12], "60,65,4,0");
    assert_eq!(rows[24], "120,125,0,3");

    let res = sbtrpo(&["diagnose", "--log", dir.path().join("none.csv").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}
