//! Grid sweeps over (alpha, eta, patience, method, generator preset).
//!
//! Cells are independent, own their output directory, and are skipped on
//! rerun when their summary already exists, so an interrupted sweep resumes
//! where it left off. Failures are recorded per cell and do not abort the
//! sweep.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synstop_core::fed::Method;
use synstop_core::stopping::fmt_sig17;

use crate::config::{ExperimentConfig, GeneratorSpec};
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, write_run};
use crate::summary::{aggregate, SummaryRow};

/// Grid file schema: each axis optional, defaulting to the base config's
/// single value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub eta: Option<Vec<usize>>,
    #[serde(default)]
    pub patience: Option<Vec<usize>>,
    #[serde(default)]
    pub method: Option<Vec<String>>,
    #[serde(default)]
    pub preset: Option<Vec<String>>,
}

impl GridSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))
    }
}

/// Stable identifier of a cell, used as its directory name.
pub fn cell_id(config: &ExperimentConfig) -> String {
    format!(
        "{}_a{}_eta{}_p{}_{}",
        config.fed.method.name(),
        config.alpha,
        config.generator.samples_per_class,
        config.patience,
        config.generator.label(),
    )
}

/// Expands the grid into one resolved config per cell, in a fixed
/// (method, alpha, eta, patience, preset) nesting order.
pub fn expand_grid(base: &ExperimentConfig, grid: &GridSpec) -> Result<Vec<ExperimentConfig>> {
    let methods: Vec<Method> = match &grid.method {
        Some(names) => names
            .iter()
            .map(|n| n.parse().map_err(|e: synstop_core::CoreError| HarnessError::config(e.to_string())))
            .collect::<Result<_>>()?,
        None => vec![base.fed.method],
    };
    let alphas = grid.alpha.clone().unwrap_or_else(|| vec![base.alpha]);
    let etas = grid
        .eta
        .clone()
        .unwrap_or_else(|| vec![base.generator.samples_per_class]);
    let patiences = grid.patience.clone().unwrap_or_else(|| vec![base.patience]);
    let presets: Vec<Option<String>> = match &grid.preset {
        Some(names) => names.iter().cloned().map(Some).collect(),
        None => vec![None],
    };

    if methods.is_empty() || alphas.is_empty() || etas.is_empty() || patiences.is_empty() || presets.is_empty()
    {
        return Err(HarnessError::config("grid axes must be non-empty"));
    }

    let mut cells = Vec::new();
    for &method in &methods {
        for &alpha in &alphas {
            for &eta in &etas {
                for &patience in &patiences {
                    for preset in &presets {
                        let mut config = base.clone();
                        config.fed.method = method;
                        config.alpha = alpha;
                        config.patience = patience;
                        config.generator = match preset {
                            Some(name) => GeneratorSpec::from_preset(name, eta),
                            None => {
                                let mut g = base.generator.clone();
                                g.samples_per_class = eta;
                                g
                            }
                        };
                        config.validate()?;
                        cells.push(config);
                    }
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell_id: String,
    pub seed: Option<u64>,
    pub error: String,
}

#[derive(Debug, Default, Serialize)]
pub struct SweepOutcome {
    pub completed: Vec<String>,
    pub skipped: Vec<String>,
    pub failures: Vec<CellFailure>,
}

fn cells_root(base: &ExperimentConfig) -> PathBuf {
    base.output_dir.join("cells")
}

/// Runs every cell of the grid with the shared seed list.
pub fn run_sweep(base: &ExperimentConfig, grid: &GridSpec, force: bool) -> Result<SweepOutcome> {
    let cells = expand_grid(base, grid)?;
    let mut outcome = SweepOutcome::default();

    for cell in &cells {
        let id = cell_id(cell);
        let dir = cells_root(base).join(&id);
        let summary_path = dir.join("summary.json");
        if summary_path.exists() && !force {
            outcome.skipped.push(id);
            continue;
        }

        match run_cell(cell, &dir) {
            Ok(()) => outcome.completed.push(id),
            Err((seed, err)) => {
                eprintln!("cell {id} failed: {err}");
                outcome.failures.push(CellFailure { cell_id: id, seed, error: err.to_string() });
            }
        }
    }

    write_sweep_summary(base, &cells)?;
    if !outcome.failures.is_empty() {
        let json = serde_json::to_string_pretty(&outcome.failures)
            .map_err(|e| HarnessError::runtime(e.to_string()))?;
        crate::experiment::atomic_write(
            &base.output_dir.join("failures.json"),
            format!("{json}\n").as_bytes(),
        )?;
    }
    Ok(outcome)
}

fn run_cell(
    cell: &ExperimentConfig,
    dir: &Path,
) -> std::result::Result<(), (Option<u64>, HarnessError)> {
    let mut results = Vec::with_capacity(cell.seeds.len());
    for &seed in &cell.seeds {
        let result = run_experiment(cell, seed, false).map_err(|e| (Some(seed), e))?;
        write_run(dir, &result).map_err(|e| (Some(seed), e))?;
        results.push(result);
    }
    let summary = aggregate(cell, &results).map_err(|e| (None, e))?;
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| (None, HarnessError::runtime(e.to_string())))?;
    crate::experiment::atomic_write(&dir.join("summary.json"), format!("{json}\n").as_bytes())
        .map_err(|e| (None, e))?;
    Ok(())
}

/// Rebuilds the sweep-level CSV from whatever cell summaries exist, in cell
/// order, so reruns produce identical bytes.
fn write_sweep_summary(base: &ExperimentConfig, cells: &[ExperimentConfig]) -> Result<()> {
    let mut csv = String::from(
        "cell_id,method,alpha,eta,patience,generator,n_runs,r_star_mean,r_near_mean,\
         speedup_mean,speedup_ratio_of_means,diff_pct_mean,abs_diff_pct_mean,no_stop_count\n",
    );
    for cell in cells {
        let id = cell_id(cell);
        let summary_path = cells_root(base).join(&id).join("summary.json");
        let Ok(text) = std::fs::read_to_string(&summary_path) else {
            continue;
        };
        let row: SummaryRow = serde_json::from_str(&text)
            .map_err(|e| HarnessError::runtime(format!("{}: {e}", summary_path.display())))?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            id,
            row.label.method,
            row.label.alpha,
            row.label.eta,
            row.label.patience,
            row.label.generator,
            row.n_runs,
            fmt_sig17(row.r_star_mean),
            fmt_sig17(row.r_near_mean),
            fmt_sig17(row.speedup_mean),
            fmt_sig17(row.speedup_ratio_of_means),
            fmt_sig17(row.diff_pct_mean),
            fmt_sig17(row.abs_diff_pct_mean),
            row.no_stop_count,
        ));
    }
    std::fs::create_dir_all(&base.output_dir)?;
    crate::experiment::atomic_write(&base.output_dir.join("sweep_summary.csv"), csv.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use synstop_core::fed::Method;

    fn tiny_base() -> ExperimentConfig {
        let mut config = crate::experiment::tests::tiny_config(Method::FedAvg);
        config.seeds = vec![0];
        config.fed.max_rounds = 6;
        config
    }

    #[test]
    fn grid_cardinality() {
        let base = tiny_base();
        let grid = GridSpec {
            alpha: Some(vec![0.001, 0.01, 0.1, 1.0]),
            patience: Some(vec![1, 5, 10]),
            ..Default::default()
        };
        let cells = expand_grid(&base, &grid).unwrap();
        assert_eq!(cells.len(), 12);
    }

    #[test]
    fn empty_grid_is_base_config_cell() {
        let base = tiny_base();
        let cells = expand_grid(&base, &GridSpec::default()).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].cell_digest(), base.cell_digest());
    }

    #[test]
    fn unknown_method_in_grid_is_config_error() {
        let base = tiny_base();
        let grid = GridSpec { method: Some(vec!["fedmagic".into()]), ..Default::default() };
        assert!(matches!(expand_grid(&base, &grid), Err(HarnessError::Config(_))));
    }

    #[test]
    fn sweep_runs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = tiny_base();
        base.output_dir = dir.path().to_path_buf();
        let grid = GridSpec { method: Some(vec!["fedavg".into(), "fedsam".into()]), ..Default::default() };

        let first = run_sweep(&base, &grid, false).unwrap();
        assert_eq!(first.completed.len(), 2);
        assert!(first.failures.is_empty());
        assert!(dir.path().join("sweep_summary.csv").exists());

        // resumable: second pass trains nothing
        let second = run_sweep(&base, &grid, false).unwrap();
        assert_eq!(second.completed.len(), 0);
        assert_eq!(second.skipped.len(), 2);

        // byte-identical sweep summary after resume
        let a = std::fs::read(dir.path().join("sweep_summary.csv")).unwrap();
        let third = run_sweep(&base, &grid, false).unwrap();
        assert_eq!(third.skipped.len(), 2);
        let b = std::fs::read(dir.path().join("sweep_summary.csv")).unwrap();
        assert_eq!(a, b);
    }
}
