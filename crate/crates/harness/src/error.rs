//! Harness-level errors, split by the exit code they map to.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration, grid, or CLI input. Exit code 1.
    #[error("config error: {0}")]
    Config(String),

    /// Runtime failure: training divergence, I/O, corrupt state. Exit code 2.
    #[error("runtime error: {0}")]
    Runtime(String),

    /// Some sweep cells failed while others completed. Exit code 3.
    #[error("sweep finished with {failed} failed cell(s)")]
    PartialSweep { failed: usize },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Runtime(_) => 2,
            HarnessError::PartialSweep { .. } => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        HarnessError::Runtime(msg.into())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
