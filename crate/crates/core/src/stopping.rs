//! Proxy-validation accuracy and the patience-based stopping rule.
//!
//! The stopping rule exists twice on purpose: [`MonitorState`] is the
//! incremental state machine used during training, and [`scan_stop_round`]
//! re-derives the stop round from a full trace via the windowed
//! non-improvement condition. The two are independent routes to the same
//! answer and are held equal by tests.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::ProxyValSet;
use crate::error::{CoreError, Result};
use crate::model::{predict, Example, ModelParams};

/// How a prediction is scored against a label vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// The whole predicted vector must equal the label vector (subset
    /// accuracy; the literal indicator reading).
    ExactMatch,
    /// Mean over individual label bits.
    PerLabel,
}

impl Default for AccuracyMode {
    fn default() -> Self {
        AccuracyMode::ExactMatch
    }
}

/// Accuracy of `params` over a slice of examples under the given mode.
pub fn accuracy(examples: &[Example], params: &ModelParams, mode: AccuracyMode) -> Result<f64> {
    if examples.is_empty() {
        return Err(CoreError::EmptyInput("accuracy"));
    }
    match mode {
        AccuracyMode::ExactMatch => {
            let mut hits = 0usize;
            for ex in examples {
                let pred = predict(params, &ex.features)?;
                hits += usize::from(pred == ex.labels);
            }
            Ok(hits as f64 / examples.len() as f64)
        }
        AccuracyMode::PerLabel => {
            let mut hits = 0usize;
            let mut total = 0usize;
            for ex in examples {
                let pred = predict(params, &ex.features)?;
                for (p, y) in pred.iter().zip(&ex.labels) {
                    total += 1;
                    hits += usize::from(p == y);
                }
            }
            Ok(hits as f64 / total as f64)
        }
    }
}

/// Synthetic validation accuracy: fraction of proxy examples whose predicted
/// label vector matches exactly.
pub fn evaluate(proxy: &ProxyValSet, params: &ModelParams) -> Result<f64> {
    evaluate_with_mode(proxy, params, AccuracyMode::ExactMatch)
}

/// [`evaluate`] with an explicit accuracy mode.
pub fn evaluate_with_mode(
    proxy: &ProxyValSet,
    params: &ModelParams,
    mode: AccuracyMode,
) -> Result<f64> {
    if proxy.is_empty() {
        return Err(CoreError::EmptyInput("evaluate"));
    }
    accuracy(&proxy.examples, params, mode)
}

/// Relative improvement from `v` to `v_next`.
///
/// `(v_next - v) / v` for `v > 0`. At `v == 0` the quotient is undefined;
/// the guards keep the sign faithful: any gain counts as +1.0, no change
/// counts as 0.0.
pub fn relative_improvement(v: f64, v_next: f64) -> Result<f64> {
    for (name, value) in [("V", v), ("V_next", v_next)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(CoreError::ValueOutOfRange { context: name, value });
        }
    }
    if v > 0.0 {
        Ok((v_next - v) / v)
    } else if v_next > 0.0 {
        Ok(1.0)
    } else {
        Ok(0.0)
    }
}

/// Decision returned by a monitor update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Incremental early-stopping monitor.
///
/// Seeded with the round-0 evaluation of the initial model; each update
/// consumes the evaluation of the model produced by one aggregation. The
/// consecutive-non-improvement counter increments when `V' <= V` and resets
/// otherwise; the stop fires when it reaches the patience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorState {
    pub patience: usize,
    pub last_value: f64,
    pub kappa: usize,
    pub rounds_seen: usize,
    pub stopped_at: Option<usize>,
}

impl MonitorState {
    /// Starts a monitor from the initial evaluation `v0`.
    pub fn new(patience: usize, v0: f64) -> Result<Self> {
        if patience == 0 {
            return Err(CoreError::InvalidArgument("patience must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&v0) {
            return Err(CoreError::ValueOutOfRange { context: "v0", value: v0 });
        }
        Ok(Self { patience, last_value: v0, kappa: 0, rounds_seen: 0, stopped_at: None })
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped_at.is_some()
    }

    /// Feeds the evaluation of the model produced by `round_completed`.
    ///
    /// Rounds must arrive in order and a stopped monitor rejects further
    /// updates. On stop, `stopped_at = round_completed + 1` (the index of
    /// the model that exhausted the patience).
    pub fn update(&mut self, round_completed: usize, v_next: f64) -> Result<Decision> {
        if let Some(stopped_at) = self.stopped_at {
            return Err(CoreError::MonitorStopped { stopped_at });
        }
        if round_completed != self.rounds_seen {
            return Err(CoreError::RoundMismatch {
                expected: self.rounds_seen,
                actual: round_completed,
            });
        }
        if !(0.0..=1.0).contains(&v_next) {
            return Err(CoreError::ValueOutOfRange { context: "v_next", value: v_next });
        }

        if v_next <= self.last_value {
            self.kappa += 1;
        } else {
            self.kappa = 0;
        }
        self.last_value = v_next;
        self.rounds_seen += 1;

        // kappa == patience already implies round_completed + 1 >= patience;
        // both conditions are checked anyway, matching the printed rule.
        if round_completed + 1 >= self.patience && self.kappa == self.patience {
            self.stopped_at = Some(round_completed + 1);
            return Ok(Decision::Stop);
        }
        Ok(Decision::Continue)
    }
}

/// A sequence of accuracies indexed by round, starting at the round-0
/// evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTrace {
    pub values: Vec<f64>,
}

impl AccuracyTrace {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::ValueOutOfRange { context: "AccuracyTrace", value: v });
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `round,value` rows, one per entry, values at 17 significant
    /// digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "round,value")?;
        for (round, v) in self.values.iter().enumerate() {
            writeln!(w, "{round},{}", fmt_sig17(*v))?;
        }
        Ok(())
    }

    /// Reads a trace written by [`Self::write_csv`] (or any `round,value`
    /// CSV with 0-based contiguous rounds).
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut values = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| CoreError::MalformedTrace {
                line: i + 1,
                message: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || (i == 0 && trimmed.starts_with("round")) {
                continue;
            }
            let mut parts = trimmed.split(',');
            let round: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CoreError::MalformedTrace {
                    line: i + 1,
                    message: "missing round column".into(),
                })?;
            let value: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CoreError::MalformedTrace {
                    line: i + 1,
                    message: "missing value column".into(),
                })?;
            if round != values.len() {
                return Err(CoreError::MalformedTrace {
                    line: i + 1,
                    message: format!("expected round {}, got {round}", values.len()),
                });
            }
            values.push(value);
        }
        Self::new(values)
    }
}

/// Formats with 17 significant digits, enough to reparse the exact f64.
pub fn fmt_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Batch re-derivation of the stopping round from a full trace: the
/// earliest round `r >= patience` whose trailing window of `patience`
/// relative improvements is entirely non-positive.
///
/// Independent of [`MonitorState`] by construction; the two must agree.
pub fn scan_stop_round(trace: &AccuracyTrace, patience: usize) -> Option<usize> {
    assert!(patience >= 1, "patience must be >= 1");
    let v = &trace.values;
    (patience..v.len()).find(|&r| {
        (r + 1 - patience..=r).all(|j| {
            let delta = relative_improvement(v[j - 1], v[j])
                .expect("trace values are validated on construction");
            delta <= 0.0
        })
    })
}

/// Replays a recorded trace through a fresh monitor and returns its stop
/// round, if any. `trace.values[0]` seeds the monitor.
pub fn monitor_stop_round(trace: &AccuracyTrace, patience: usize) -> Result<Option<usize>> {
    if trace.is_empty() {
        return Err(CoreError::EmptyInput("monitor_stop_round"));
    }
    let mut monitor = MonitorState::new(patience, trace.values[0])?;
    for (i, &v) in trace.values.iter().enumerate().skip(1) {
        if monitor.update(i - 1, v)? == Decision::Stop {
            break;
        }
    }
    Ok(monitor.stopped_at)
}

/// Test-optimal round: argmax of the trace, earliest round on ties.
pub fn oracle_best_round(trace: &AccuracyTrace) -> Result<usize> {
    if trace.is_empty() {
        return Err(CoreError::EmptyInput("oracle_best_round"));
    }
    let mut best = 0usize;
    for (i, &v) in trace.values.iter().enumerate() {
        if v > trace.values[best] {
            best = i;
        }
    }
    Ok(best)
}
