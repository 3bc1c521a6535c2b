//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An input had the wrong shape or length.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A categorical id fell outside its embedding table.
    #[error("id {id} out of range for table `{table}` (cardinality {cardinality})")]
    IdOutOfRange {
        table: String,
        id: usize,
        cardinality: usize,
    },

    /// An input failed a precondition other than shape.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// A loss, gradient, or network output stopped being finite.
    #[error("training divergence: {0}")]
    Divergence(String),

    /// The replay buffer does not yet hold enough transitions to sample.
    #[error("replay buffer not ready: holds {have} transitions, need {need}")]
    BufferNotReady { have: usize, need: usize },

    /// Configuration file or flag validation failure.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint container parse/shape failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Too many unparseable records during offline evaluation.
    #[error("{malformed} of {total} records malformed (> {limit_percent}% limit)")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        limit_percent: usize,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
