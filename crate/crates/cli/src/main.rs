use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mfrl::harness::{self, ExperimentConfig, Mode, Plan};

/// Multi-fidelity falsification experiments on the puddle grid world.
#[derive(Parser)]
#[command(name = "falsify", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run trials in one mode.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Run only this reward decrement instead of every configured one.
        #[arg(long = "r-inc")]
        r_inc: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run both modes over every configured reward decrement.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average per-trial CSV files into one table.
    Aggregate {
        /// Directory holding per-trial CSV files.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(config: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match config {
        Some(path) => Ok(ExperimentConfig::from_json_file(path)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn report(r: &harness::Report, started: Instant) {
    eprintln!(
        "{} trial files, {} aggregate rows in {:.1}s -> {}",
        r.trial_files.len(),
        r.aggregate.len(),
        started.elapsed().as_secs_f64(),
        r.aggregate_file.display()
    );
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let started = Instant::now();
    match cli.command {
        Command::Run {
            config,
            mode,
            r_inc,
            trials,
            iterations,
            seed,
            out,
        } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(n) = trials {
                cfg.trials = n;
            }
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            cfg.validate()?;
            let plan = Plan::single_mode(&mut cfg, r_inc);
            cfg.validate()?;
            let r = harness::run_plan(&cfg, &plan)?;
            report(&r, started);
        }
        Command::Sweep { config, out } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            let r = harness::run_sweep(&cfg)?;
            report(&r, started);
        }
        Command::Aggregate { input, out } => {
            let files = harness::trial_files(&input)?;
            anyhow::ensure!(!files.is_empty(), "no CSV files in {}", input.display());
            let rows = harness::aggregate(&files)?;
            harness::write_aggregate_csv(&out, &rows)
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!("{} files, {} rows -> {}", files.len(), rows.len(), out.display());
        }
    }
    Ok(())
}
