//! `synstop` CLI: run experiments, sweep grids, verify and render reports,
//! replay recorded traces.
//!
//! Exit codes: 0 success, 1 config error, 2 runtime/divergence failure,
//! 3 partial sweep failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use synstop::config::ExperimentConfig;
use synstop::error::{HarnessError, Result};
use synstop::experiment::{run_experiment, write_run};
use synstop::report::{build_report, render_table, trace_run};
use synstop::summary::aggregate;
use synstop::sweep::{run_sweep, GridSpec};

#[derive(Parser)]
#[command(name = "synstop", version, about = "Federated learning simulator with proxy-validation early stopping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment cell (all configured seeds, or a single seed).
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop training at the stop decision instead of recording to
        /// max_rounds (the test-optimal round is then only a lower bound).
        #[arg(long)]
        halt_at_stop: bool,
    },
    /// Run every cell of a grid over the base config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Path to the grid file (JSON).
        #[arg(long)]
        grid: PathBuf,
        /// Re-run cells even if their summary already exists.
        #[arg(long)]
        force: bool,
    },
    /// Verify stored metrics against raw CSVs and render summary tables.
    Report {
        /// Directory containing run outputs (searched recursively).
        #[arg(long)]
        dir: PathBuf,
    },
    /// Replay one recorded run through the stopping rule.
    Trace {
        #[arg(long)]
        dir: PathBuf,
        /// Run id: a seed ("0"), a file stem ("run_0"), or a relative path.
        #[arg(long)]
        run: String,
        /// Override the patience (defaults to the run's recorded patience).
        #[arg(long)]
        patience: Option<usize>,
    },
}

fn cmd_run(config_path: &PathBuf, seed: Option<u64>, halt_at_stop: bool) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let seeds: Vec<u64> = match seed {
        Some(s) => vec![s],
        None => config.seeds.clone(),
    };

    let mut results = Vec::with_capacity(seeds.len());
    for &s in &seeds {
        let result = run_experiment(&config, s, halt_at_stop)?;
        write_run(&config.output_dir, &result)?;
        let stop = if result.no_stop {
            format!("none (ran to {})", result.r_near)
        } else {
            result.r_near.to_string()
        };
        println!(
            "seed {s}: stop={stop} r*={} speedup=x{:.2} diff={:+.2}%",
            result.r_star, result.speedup, result.diff_pct
        );
        results.push(result);
    }

    if seed.is_none() {
        let summary = aggregate(&config, &results)?;
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| HarnessError::runtime(e.to_string()))?;
        synstop::experiment::atomic_write(
            &config.output_dir.join("summary.json"),
            format!("{json}\n").as_bytes(),
        )?;
        println!(
            "mean over {} seeds: r_near={:.1} r*={:.1} speedup=x{:.2} diff={:+.2}%",
            summary.n_runs,
            summary.r_near_mean,
            summary.r_star_mean,
            summary.speedup_mean,
            summary.diff_pct_mean
        );
    }
    println!("wrote {}", config.output_dir.display());
    Ok(())
}

fn cmd_sweep(config_path: &PathBuf, grid_path: &PathBuf, force: bool) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let grid = GridSpec::load(grid_path)?;
    let outcome = run_sweep(&config, &grid, force)?;
    println!(
        "sweep: {} completed, {} skipped, {} failed",
        outcome.completed.len(),
        outcome.skipped.len(),
        outcome.failures.len()
    );
    println!("wrote {}", config.output_dir.join("sweep_summary.csv").display());
    if !outcome.failures.is_empty() {
        return Err(HarnessError::PartialSweep { failed: outcome.failures.len() });
    }
    Ok(())
}

fn cmd_report(dir: &PathBuf) -> Result<()> {
    let report = build_report(dir)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    print!("{}", render_table(&report.rows));
    println!();
    println!("checked {} run(s); {} metric mismatch(es)", report.runs_checked, report.mismatches.len());
    for m in &report.mismatches {
        eprintln!("mismatch in {} / {}: stored {} vs recomputed {}", m.run, m.field, m.stored, m.recomputed);
    }
    println!("wrote {}", dir.join("report").display());
    Ok(())
}

fn run_cli(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config, seed, halt_at_stop } => cmd_run(config, *seed, *halt_at_stop),
        Command::Sweep { config, grid, force } => cmd_sweep(config, grid, *force),
        Command::Report { dir } => cmd_report(dir),
        Command::Trace { dir, run, patience } => {
            print!("{}", trace_run(dir, run, *patience)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_cli(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
