//! Single-run execution: build task, partition, proxy set; run rounds with
//! the monitor; derive the stopping metrics; persist artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synstop_core::data::{dirichlet_partition, make_proxy_valset, make_task};
use synstop_core::fed::{run_round, RoundRecord, StrategyState};
use synstop_core::model::ModelParams;
use synstop_core::stopping::{
    accuracy, evaluate_with_mode, fmt_sig17, AccuracyMode, AccuracyTrace, Decision, MonitorState,
    oracle_best_round,
};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// Identifies which cell a run belongs to; embedded in every result so
/// artifacts are self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLabel {
    pub method: String,
    pub alpha: f64,
    pub eta: usize,
    pub patience: usize,
    pub generator: String,
    pub metric_mode: AccuracyMode,
}

impl RunLabel {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            method: config.fed.method.name().to_string(),
            alpha: config.alpha,
            eta: config.generator.samples_per_class,
            patience: config.patience,
            generator: config.generator.label(),
            metric_mode: config.metric_mode,
        }
    }
}

/// Outcome of one seeded run.
///
/// `records[r]` holds the metrics of the model after `r` aggregations;
/// record 0 is the evaluation of the random initialization. `r_near` is the
/// early-stopping round, reported as `max_rounds` with `no_stop = true` when
/// the monitor never fired. `speedup` is `r_star / r_near`, defined as 1.0
/// for no-stop runs; `diff_pct` is the test-accuracy deviation at the early
/// stop in percentage points (non-positive on a full trace).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: RunLabel,
    pub seed: u64,
    pub config_digest: String,
    pub records: Vec<RoundRecord>,
    pub r_near: usize,
    pub no_stop: bool,
    pub r_star: usize,
    pub acc_at_r_near: f64,
    pub acc_at_r_star: f64,
    pub speedup: f64,
    pub diff_pct: f64,
}

/// Runs one full experiment for one seed.
///
/// The monitor decides the stop round but training continues to
/// `max_rounds` (recording only) so the test-optimal round stays
/// observable; `halt_at_stop` trades that away for pure savings.
pub fn run_experiment(
    config: &ExperimentConfig,
    seed: u64,
    halt_at_stop: bool,
) -> Result<RunResult> {
    config.validate()?;
    let runtime = |e: synstop_core::CoreError| HarnessError::runtime(e.to_string());

    let spec = config.task.resolve(seed)?;
    let generator = config.generator.resolve()?;
    let arch = config.task.arch()?;
    let mode = config.metric_mode;

    let (train, test) = make_task(&spec, seed).map_err(runtime)?;
    let shards =
        dirichlet_partition(&train, config.fed.n_clients, config.alpha, seed).map_err(runtime)?;
    let proxy = make_proxy_valset(&spec, &generator, seed).map_err(runtime)?;

    let mut global = ModelParams::init_uniform(arch, seed);
    let mut state = StrategyState::new();

    let v0 = evaluate_with_mode(&proxy, &global, mode).map_err(runtime)?;
    let test0 = accuracy(&test.examples, &global, mode).map_err(runtime)?;
    let loss0 = {
        let mut sum = 0.0;
        for shard in &shards {
            let data: Vec<_> = shard
                .example_indices
                .iter()
                .map(|&i| train.examples[i].clone())
                .collect();
            sum += synstop_core::model::local_loss(&global, &data).map_err(runtime)?;
        }
        sum / shards.len() as f64
    };

    let mut records = vec![RoundRecord {
        round: 0,
        participants: Vec::new(),
        val_acc_syn: v0,
        test_acc: test0,
        global_loss: loss0,
        wall_time: Default::default(),
    }];

    let mut monitor = MonitorState::new(config.patience, v0).map_err(runtime)?;
    for round in 0..config.fed.max_rounds {
        let (next, rec) = run_round(
            round, &global, &shards, &train, &proxy, &test, &mut state, &config.fed, seed, mode,
        )
        .map_err(runtime)?;
        global = next;
        records.push(RoundRecord { round: round + 1, ..rec });

        if !monitor.is_stopped() {
            let decision = monitor.update(round, records[round + 1].val_acc_syn).map_err(runtime)?;
            if decision == Decision::Stop && halt_at_stop {
                break;
            }
        }
    }

    let test_trace = AccuracyTrace::new(records.iter().map(|r| r.test_acc).collect())
        .map_err(runtime)?;
    let r_star = oracle_best_round(&test_trace).map_err(runtime)?;
    let (r_near, no_stop) = match monitor.stopped_at {
        Some(r) => (r, false),
        None => (config.fed.max_rounds, true),
    };
    let acc_at_r_near = records[r_near].test_acc;
    let acc_at_r_star = records[r_star].test_acc;
    let speedup = if no_stop { 1.0 } else { r_star as f64 / r_near as f64 };
    let diff_pct = 100.0 * (acc_at_r_near - acc_at_r_star);

    Ok(RunResult {
        label: RunLabel::from_config(config),
        seed,
        config_digest: config.cell_digest(),
        records,
        r_near,
        no_stop,
        r_star,
        acc_at_r_near,
        acc_at_r_star,
        speedup,
        diff_pct,
    })
}

pub fn run_csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("run_{seed}.csv"))
}

pub fn run_json_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("run_{seed}.json"))
}

/// Writes `bytes` to `path` via a temp file and rename, so readers never
/// observe partial files.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Persists a run as `run_<seed>.csv` (per-round trace) and
/// `run_<seed>.json` (full result). Floats go out at 17 significant digits.
pub fn write_run(dir: &Path, result: &RunResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut csv = String::from("round,val_acc_syn,test_acc,global_loss\n");
    for rec in &result.records {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            rec.round,
            fmt_sig17(rec.val_acc_syn),
            fmt_sig17(rec.test_acc),
            fmt_sig17(rec.global_loss),
        ));
    }
    atomic_write(&run_csv_path(dir, result.seed), csv.as_bytes())?;

    let json = serde_json::to_string_pretty(result)
        .map_err(|e| HarnessError::runtime(e.to_string()))?;
    atomic_write(&run_json_path(dir, result.seed), format!("{json}\n").as_bytes())?;
    Ok(())
}

pub fn load_run_json(path: &Path) -> Result<RunResult> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::runtime(format!("{}: {e}", path.display())))
}

/// One parsed row of a run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub round: usize,
    pub val_acc_syn: f64,
    pub test_acc: f64,
    pub global_loss: f64,
}

pub fn load_run_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let bad = |line: usize, what: &str| {
        HarnessError::runtime(format!("{}:{line}: {what}", path.display()))
    };
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "round,val_acc_syn,test_acc,global_loss" {
                return Err(bad(1, "unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(i + 1, "expected 4 columns"));
        }
        let row = EvalRow {
            round: fields[0].parse().map_err(|_| bad(i + 1, "bad round"))?,
            val_acc_syn: fields[1].parse().map_err(|_| bad(i + 1, "bad val_acc_syn"))?,
            test_acc: fields[2].parse().map_err(|_| bad(i + 1, "bad test_acc"))?,
            global_loss: fields[3].parse().map_err(|_| bad(i + 1, "bad global_loss"))?,
        };
        if row.round != rows.len() {
            return Err(bad(i + 1, "rounds must be contiguous from 0"));
        }
        rows.push(row);
    }
    Ok(rows)
}
