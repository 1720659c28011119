//! Post-hoc reporting: re-derives every stopping metric from the raw
//! per-round CSVs, cross-checks them against the stored run results, and
//! renders summary tables plus plot-ready trace files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use synstop_core::stopping::{
    fmt_sig17, monitor_stop_round, oracle_best_round, scan_stop_round, AccuracyTrace,
};

use crate::error::{HarnessError, Result};
use crate::experiment::{load_run_csv, load_run_json, EvalRow, RunResult};
use crate::summary::{summarize, SummaryRow};

/// Metrics re-derived from a raw CSV trace alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecomputedMetrics {
    pub r_near: usize,
    pub no_stop: bool,
    pub r_star: usize,
    pub acc_at_r_near: f64,
    pub acc_at_r_star: f64,
    pub speedup: f64,
    pub diff_pct: f64,
}

/// Recomputes the stopping metrics from CSV rows, independently of the
/// values the run stored.
pub fn recompute_metrics(rows: &[EvalRow], patience: usize) -> Result<RecomputedMetrics> {
    if rows.is_empty() {
        return Err(HarnessError::runtime("empty trace"));
    }
    let val = AccuracyTrace::new(rows.iter().map(|r| r.val_acc_syn).collect())
        .map_err(|e| HarnessError::runtime(e.to_string()))?;
    let test = AccuracyTrace::new(rows.iter().map(|r| r.test_acc).collect())
        .map_err(|e| HarnessError::runtime(e.to_string()))?;

    let stop = monitor_stop_round(&val, patience).map_err(|e| HarnessError::runtime(e.to_string()))?;
    let r_star = oracle_best_round(&test).map_err(|e| HarnessError::runtime(e.to_string()))?;
    let (r_near, no_stop) = match stop {
        Some(r) => (r, false),
        None => (rows.len() - 1, true),
    };
    let acc_at_r_near = test.values[r_near];
    let acc_at_r_star = test.values[r_star];
    Ok(RecomputedMetrics {
        r_near,
        no_stop,
        r_star,
        acc_at_r_near,
        acc_at_r_star,
        speedup: if no_stop { 1.0 } else { r_star as f64 / r_near as f64 },
        diff_pct: 100.0 * (acc_at_r_near - acc_at_r_star),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub run: String,
    pub field: String,
    pub stored: String,
    pub recomputed: String,
}

#[derive(Debug, Default, Serialize)]
pub struct Report {
    pub runs_checked: usize,
    pub rows: Vec<SummaryRow>,
    pub mismatches: Vec<Mismatch>,
    pub warnings: Vec<String>,
}

fn find_run_jsons(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            find_run_jsons(&path, out)?;
        } else if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if name.starts_with("run_") && name.ends_with(".json") {
                out.push(path);
            }
        }
    }
    Ok(())
}

fn compare(
    run_name: &str,
    stored: &RunResult,
    recomputed: &RecomputedMetrics,
    mismatches: &mut Vec<Mismatch>,
) {
    let mut push = |field: &str, stored: String, recomputed: String| {
        mismatches.push(Mismatch {
            run: run_name.to_string(),
            field: field.to_string(),
            stored,
            recomputed,
        });
    };
    if stored.r_near != recomputed.r_near {
        push("r_near", stored.r_near.to_string(), recomputed.r_near.to_string());
    }
    if stored.no_stop != recomputed.no_stop {
        push("no_stop", stored.no_stop.to_string(), recomputed.no_stop.to_string());
    }
    if stored.r_star != recomputed.r_star {
        push("r_star", stored.r_star.to_string(), recomputed.r_star.to_string());
    }
    for (field, a, b) in [
        ("acc_at_r_near", stored.acc_at_r_near, recomputed.acc_at_r_near),
        ("acc_at_r_star", stored.acc_at_r_star, recomputed.acc_at_r_star),
        ("speedup", stored.speedup, recomputed.speedup),
        ("diff_pct", stored.diff_pct, recomputed.diff_pct),
    ] {
        if a.to_bits() != b.to_bits() {
            push(field, fmt_sig17(a), fmt_sig17(b));
        }
    }
}

/// Scans a directory tree of run outputs, verifies stored metrics against
/// the raw CSVs, and writes `report/` artifacts (table, trace files,
/// machine-readable summary). Missing or corrupt files become warnings.
pub fn build_report(dir: &Path) -> Result<Report> {
    let mut report = Report::default();
    let mut run_paths = Vec::new();
    find_run_jsons(dir, &mut run_paths)
        .map_err(|e| HarnessError::runtime(format!("{}: {e}", dir.display())))?;
    if run_paths.is_empty() {
        report.warnings.push(format!("no run files found under {}", dir.display()));
    }

    let report_dir = dir.join("report");
    std::fs::create_dir_all(&report_dir)?;

    // digest -> runs in that cell
    let mut groups: BTreeMap<String, Vec<RunResult>> = BTreeMap::new();

    for json_path in &run_paths {
        let rel = json_path.strip_prefix(dir).unwrap_or(json_path);
        let run_name = rel.to_string_lossy().replace(std::path::MAIN_SEPARATOR, "/");
        let stored = match load_run_json(json_path) {
            Ok(r) => r,
            Err(e) => {
                report.warnings.push(format!("{run_name}: unreadable ({e})"));
                continue;
            }
        };
        let csv_path = json_path.with_extension("csv");
        let rows = match load_run_csv(&csv_path) {
            Ok(rows) => rows,
            Err(e) => {
                report.warnings.push(format!("{run_name}: missing or bad CSV ({e})"));
                continue;
            }
        };

        let recomputed = recompute_metrics(&rows, stored.label.patience)?;
        compare(&run_name, &stored, &recomputed, &mut report.mismatches);
        report.runs_checked += 1;

        // plot data: round, val_acc_syn, test_acc
        let trace_name = format!(
            "trace_{}.csv",
            run_name.trim_end_matches(".json").replace('/', "_")
        );
        let mut trace = String::from("round,val_acc_syn,test_acc\n");
        for row in &rows {
            trace.push_str(&format!(
                "{},{},{}\n",
                row.round,
                fmt_sig17(row.val_acc_syn),
                fmt_sig17(row.test_acc)
            ));
        }
        crate::experiment::atomic_write(&report_dir.join(trace_name), trace.as_bytes())?;

        groups.entry(stored.config_digest.clone()).or_default().push(stored);
    }

    for (digest, runs) in &groups {
        let refs: Vec<&RunResult> = runs.iter().collect();
        let row = summarize(runs[0].label.clone(), digest.clone(), &refs)?;
        report.rows.push(row);
    }
    report.rows.sort_by(|a, b| {
        a.label
            .method
            .cmp(&b.label.method)
            .then(a.label.alpha.total_cmp(&b.label.alpha))
            .then(a.label.eta.cmp(&b.label.eta))
            .then(a.label.patience.cmp(&b.label.patience))
            .then(a.label.generator.cmp(&b.label.generator))
    });

    let table = render_table(&report.rows);
    crate::experiment::atomic_write(&report_dir.join("report.md"), table.as_bytes())?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| HarnessError::runtime(e.to_string()))?;
    crate::experiment::atomic_write(&report_dir.join("summary.json"), format!("{json}\n").as_bytes())?;
    Ok(report)
}

/// Plain-text table of summary rows, grouped by method; round means are
/// rendered rounded, speed-ups and deviations with two decimals.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    if rows.is_empty() {
        out.push_str("(no runs found)\n");
        return out;
    }
    let mut current_method = None;
    for row in rows {
        if current_method != Some(&row.label.method) {
            if current_method.is_some() {
                out.push('\n');
            }
            out.push_str(&format!("## {}\n\n", row.label.method));
            out.push_str(
                "| alpha | eta | p | generator | r* | r_near | speed-up | diff (%) | no-stop |\n",
            );
            out.push_str(
                "|-------|-----|---|-----------|----|--------|----------|----------|---------|\n",
            );
            current_method = Some(&row.label.method);
        }
        out.push_str(&format!(
            "| {} | {} | {} | {} | {:.0} | {:.0} | x{:.2} | {:+.2} | {}/{} |\n",
            row.label.alpha,
            row.label.eta,
            row.label.patience,
            row.label.generator,
            row.r_star_mean,
            row.r_near_mean,
            row.speedup_mean,
            row.diff_pct_mean,
            row.no_stop_count,
            row.n_runs,
        ));
    }
    out
}

/// Replays one recorded run through the monitor and the batch scan,
/// optionally under a different patience, and formats the outcome.
pub fn trace_run(dir: &Path, run_id: &str, patience: Option<usize>) -> Result<String> {
    let csv_path = locate_run_csv(dir, run_id)?;
    let rows = load_run_csv(&csv_path)?;
    if rows.is_empty() {
        return Err(HarnessError::runtime(format!("{}: empty trace", csv_path.display())));
    }

    let stored = load_run_json(&csv_path.with_extension("json")).ok();
    let patience = match patience.or_else(|| stored.as_ref().map(|r| r.label.patience)) {
        Some(p) => p,
        None => {
            return Err(HarnessError::config(
                "no sibling run JSON found; pass --patience explicitly",
            ))
        }
    };

    let metrics = recompute_metrics(&rows, patience)?;
    let val = AccuracyTrace::new(rows.iter().map(|r| r.val_acc_syn).collect())
        .map_err(|e| HarnessError::runtime(e.to_string()))?;
    let scan = scan_stop_round(&val, patience);

    let mut out = String::new();
    out.push_str(&format!("trace: {}\n", csv_path.display()));
    out.push_str(&format!("rounds: {} (0..={})\n", rows.len(), rows.len() - 1));
    out.push_str(&format!("patience: {patience}\n"));
    out.push_str(&format!(
        "monitor stop: {}\n",
        metrics.no_stop.then(|| "none".to_string()).unwrap_or_else(|| metrics.r_near.to_string())
    ));
    out.push_str(&format!(
        "batch scan:   {}\n",
        scan.map_or("none".to_string(), |r| r.to_string())
    ));
    out.push_str(&format!("test-optimal round: {}\n", metrics.r_star));
    out.push_str(&format!(
        "speed-up: x{:.2}   diff: {:+.2}%\n",
        metrics.speedup, metrics.diff_pct
    ));
    Ok(out)
}

fn locate_run_csv(dir: &Path, run_id: &str) -> Result<PathBuf> {
    let direct = dir.join(run_id);
    if direct.is_file() {
        return Ok(direct);
    }
    let mut wanted = Vec::new();
    if run_id.ends_with(".csv") {
        wanted.push(run_id.to_string());
    } else {
        wanted.push(format!("{run_id}.csv"));
        wanted.push(format!("run_{run_id}.csv"));
    }

    let mut matches = Vec::new();
    let mut jsons = Vec::new();
    find_run_jsons(dir, &mut jsons)
        .map_err(|e| HarnessError::runtime(format!("{}: {e}", dir.display())))?;
    for json in jsons {
        let csv = json.with_extension("csv");
        if let Some(name) = csv.file_name().and_then(|n| n.to_str()) {
            if wanted.iter().any(|w| w == name) && csv.is_file() {
                matches.push(csv);
            }
        }
    }
    match matches.len() {
        0 => Err(HarnessError::config(format!(
            "no run named '{run_id}' under {}",
            dir.display()
        ))),
        1 => Ok(matches.remove(0)),
        _ => Err(HarnessError::config(format!(
            "run id '{run_id}' is ambiguous: {}",
            matches.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{run_experiment, write_run};
    use synstop_core::fed::Method;

    #[test]
    fn report_on_empty_dir_warns() {
        let dir = tempfile::tempdir().unwrap();
        let report = build_report(dir.path()).unwrap();
        assert_eq!(report.runs_checked, 0);
        assert!(!report.warnings.is_empty());
        assert!(dir.path().join("report/report.md").exists());
    }

    #[test]
    fn report_verifies_stored_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let config = crate::experiment::tests::tiny_config(Method::FedAvg);
        for seed in [0, 1] {
            let result = run_experiment(&config, seed, false).unwrap();
            write_run(dir.path(), &result).unwrap();
        }
        let report = build_report(dir.path()).unwrap();
        assert_eq!(report.runs_checked, 2);
        assert!(report.mismatches.is_empty(), "{:?}", report.mismatches);
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].n_runs, 2);
        // one trace file per run, with all evaluation rows
        let trace = std::fs::read_to_string(dir.path().join("report/trace_run_0.csv")).unwrap();
        assert_eq!(trace.lines().count(), config.fed.max_rounds + 2); // header + R+1 rows
    }

    #[test]
    fn report_flags_tampered_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let config = crate::experiment::tests::tiny_config(Method::FedAvg);
        let mut result = run_experiment(&config, 0, false).unwrap();
        result.speedup += 0.25; // corrupt the stored value
        write_run(dir.path(), &result).unwrap();
        let report = build_report(dir.path()).unwrap();
        assert_eq!(report.mismatches.len(), 1);
        assert_eq!(report.mismatches[0].field, "speedup");
    }

    #[test]
    fn report_warns_on_missing_csv() {
        let dir = tempfile::tempdir().unwrap();
        let config = crate::experiment::tests::tiny_config(Method::FedAvg);
        let result = run_experiment(&config, 0, false).unwrap();
        write_run(dir.path(), &result).unwrap();
        std::fs::remove_file(dir.path().join("run_0.csv")).unwrap();
        let report = build_report(dir.path()).unwrap();
        assert_eq!(report.runs_checked, 0);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn trace_replay_agrees_with_stored_run() {
        let dir = tempfile::tempdir().unwrap();
        let config = crate::experiment::tests::tiny_config(Method::FedAvg);
        let result = run_experiment(&config, 0, false).unwrap();
        write_run(dir.path(), &result).unwrap();
        let text = trace_run(dir.path(), "0", None).unwrap();
        if result.no_stop {
            assert!(text.contains("monitor stop: none"));
        } else {
            assert!(text.contains(&format!("monitor stop: {}", result.r_near)));
        }
        assert!(text.contains(&format!("test-optimal round: {}", result.r_star)));
    }
}
