use std::fmt;

use thiserror::Error;

/// Why a stay was rejected during preprocessing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    /// The stay has no discharge summary at all.
    NoDischargeSummary,
    /// The discharge summary is the only note.
    DischargeOnly,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::NoDischargeSummary => "no-discharge-summary",
            RejectReason::DischargeOnly => "discharge-only",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("stay {stay_id} rejected: {reason}")]
    Rejected { stay_id: String, reason: RejectReason },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "non-finite loss at step {step} (lr {lr:.3e}); gradient norms: {grad_norms}"
    )]
    NumericFailure {
        step: u64,
        lr: f64,
        grad_norms: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericFailure { .. } => 3,
            Error::Io(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
