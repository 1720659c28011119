//! Multi-seed aggregation of run results into one summary row per cell.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{RunLabel, RunResult};

/// Per-cell summary over seeds. Round means are kept as reals; table
/// renderers round them for display. Speed-up is reported both as the mean
/// of per-seed ratios and as the ratio of mean rounds, since the two can
/// disagree and either reading is defensible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: RunLabel,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub n_runs: usize,
    pub r_star_mean: f64,
    pub r_star_std: f64,
    pub r_near_mean: f64,
    pub r_near_std: f64,
    pub speedup_mean: f64,
    pub speedup_std: f64,
    pub speedup_ratio_of_means: f64,
    pub diff_pct_mean: f64,
    pub diff_pct_std: f64,
    pub abs_diff_pct_mean: f64,
    pub acc_at_r_near_mean: f64,
    pub acc_at_r_star_mean: f64,
    pub no_stop_count: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Summarizes runs that share one cell digest.
pub fn summarize(label: RunLabel, digest: String, results: &[&RunResult]) -> Result<SummaryRow> {
    if results.is_empty() {
        return Err(HarnessError::runtime("aggregate requires at least one run"));
    }
    for r in results {
        if r.config_digest != digest {
            return Err(HarnessError::runtime(format!(
                "mixed configs in aggregation: run seed {} has digest {}, expected {digest}",
                r.seed, r.config_digest
            )));
        }
    }

    let r_star: Vec<f64> = results.iter().map(|r| r.r_star as f64).collect();
    let r_near: Vec<f64> = results.iter().map(|r| r.r_near as f64).collect();
    let speedup: Vec<f64> = results.iter().map(|r| r.speedup).collect();
    let diff: Vec<f64> = results.iter().map(|r| r.diff_pct).collect();
    let abs_diff: Vec<f64> = results.iter().map(|r| r.diff_pct.abs()).collect();
    let acc_near: Vec<f64> = results.iter().map(|r| r.acc_at_r_near).collect();
    let acc_star: Vec<f64> = results.iter().map(|r| r.acc_at_r_star).collect();

    let r_near_mean = mean(&r_near);
    Ok(SummaryRow {
        label,
        config_digest: digest,
        seeds: results.iter().map(|r| r.seed).collect(),
        n_runs: results.len(),
        r_star_mean: mean(&r_star),
        r_star_std: sample_std(&r_star),
        r_near_mean,
        r_near_std: sample_std(&r_near),
        speedup_mean: mean(&speedup),
        speedup_std: sample_std(&speedup),
        speedup_ratio_of_means: if r_near_mean > 0.0 { mean(&r_star) / r_near_mean } else { 1.0 },
        diff_pct_mean: mean(&diff),
        diff_pct_std: sample_std(&diff),
        abs_diff_pct_mean: mean(&abs_diff),
        acc_at_r_near_mean: mean(&acc_near),
        acc_at_r_star_mean: mean(&acc_star),
        no_stop_count: results.iter().filter(|r| r.no_stop).count(),
    })
}

/// Aggregates runs of one cell. Every result must carry the digest of
/// `config`; mixing cells is an error.
pub fn aggregate(config: &ExperimentConfig, results: &[RunResult]) -> Result<SummaryRow> {
    let refs: Vec<&RunResult> = results.iter().collect();
    summarize(RunLabel::from_config(config), config.cell_digest(), &refs)
}
