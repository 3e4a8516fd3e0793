use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use sbtrpo::config::parse_config;
use sbtrpo::harness::{
    apply_seed_override, diagnose_command, exit, exit_code, oracle_command, parse_betas, parse_seeds,
    run_command, sweep_command, SWEEP_FILE,
};
use sbtrpo::trainer::TrainConfig;
use sbtrpo::Error;

/// Safety-biased trust region policy optimisation.
#[derive(Parser)]
#[command(name = "sbtrpo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy and write log.csv and summary.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One run per (beta, seed) pair plus a combined sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Comma-separated safety biases.
        #[arg(long)]
        beta: String,
        /// Inclusive range `A..B` or comma-separated list.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Angle histograms (5 degree bins) from a run log.
    Diagnose {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact values of the safe optimal policy of a grid config.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn load(path: &Path, set: &[String]) -> Result<TrainConfig, Error> {
    let mut cfg = parse_config(path, set)?;
    apply_seed_override(&mut cfg, std::env::var("SBTRPO_SEED").ok().as_deref())?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, set, out } => {
            let cfg = load(&config, &set)?;
            let summary = run_command(&cfg, &out).map_err(|e| e.error)?;
            print!("{}", summary.to_text());
        }
        Command::Sweep {
            config,
            set,
            beta,
            seeds,
            out,
        } => {
            let cfg = load(&config, &set)?;
            let betas = parse_betas(&beta)?;
            let seeds = parse_seeds(&seeds)?;
            let rows = sweep_command(&cfg, &betas, &seeds, &out).map_err(|e| e.error)?;
            println!("{} runs, table in {}", rows.len(), out.join(SWEEP_FILE).display());
        }
        Command::Diagnose { log, out } => {
            let hist = diagnose_command(&log, &out)?;
            println!(
                "{} reward angles, {} cost angles",
                hist.reward.iter().sum::<usize>(),
                hist.cost.iter().sum::<usize>()
            );
        }
        Command::Oracle { config, set } => {
            let cfg = load(&config, &set)?;
            print!("{}", oracle_command(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(exit::CONFIG as u8),
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            match e {
                Error::Infeasible(_) | Error::Degenerate(_) => eprintln!("diagnosis: {e}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(code as u8)
        }
    }
}
