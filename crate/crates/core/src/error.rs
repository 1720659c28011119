//! Error type shared across the simulator core.

use thiserror::Error;

/// Errors produced by the simulator core.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A vector length did not match what the receiving operation requires.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An operation whose contract requires a non-empty input got an empty one.
    #[error("{0} requires non-empty input")]
    EmptyInput(&'static str),

    /// A configuration or argument value is outside its valid range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Rejection sampling could not produce an example for a class within
    /// the retry budget.
    #[error("class {class} unreachable: rejection sampling exhausted {budget} draws")]
    ClassUnreachable { class: usize, budget: usize },

    /// Local or global parameters became non-finite during training.
    #[error("non-finite parameters at round {round}, client {client}")]
    Divergence { round: usize, client: usize },

    /// The early-stopping monitor was updated after it already decided.
    #[error("monitor already stopped at round {stopped_at}")]
    MonitorStopped { stopped_at: usize },

    /// A monitor update arrived out of order.
    #[error("monitor round mismatch: expected {expected}, got {actual}")]
    RoundMismatch { expected: usize, actual: usize },

    /// A trace or accuracy value fell outside [0, 1].
    #[error("value {value} outside [0, 1] in {context}")]
    ValueOutOfRange { context: &'static str, value: f64 },

    /// Trace CSV could not be parsed.
    #[error("malformed trace at line {line}: {message}")]
    MalformedTrace { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;
