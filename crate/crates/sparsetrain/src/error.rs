//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A dense operand does not match the sparse layer it is applied to.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// A structural edit referenced a position it must not touch.
    #[error("structural edit error at ({row}, {col}): {reason}")]
    StructuralEdit {
        row: usize,
        col: usize,
        reason: &'static str,
    },

    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A gradient or trace is aligned to a different topology version.
    #[error("stale {what}: aligned to topology version {found}, model is at {current}")]
    Stale {
        what: &'static str,
        found: u64,
        current: u64,
    },

    /// Malformed input data (CSV rows, labels out of range, empty sets).
    #[error("data error: {0}")]
    Data(String),

    /// A protocol message arrived in the wrong phase or with an
    /// incompatible architecture.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Checkpoint or container bytes do not match the expected format.
    #[error("format error in {context}: {reason}")]
    Format { context: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A run configuration failed validation before any work started.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
