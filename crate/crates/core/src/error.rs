//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Shapes or dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A computation produced or received a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An operation was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),
    /// A checkpoint file is malformed.
    #[error("checkpoint format error: {0}")]
    Format(String),
    /// A checkpoint does not match the supplied config or requested mode.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 1 for invalid configuration or
    /// usage, 2 for I/O and file-format failures, 3 for checkpoint/config
    /// or checkpoint/mode mismatches.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Domain(_)
            | Error::Dimension(_)
            | Error::Numeric(_)
            | Error::Usage(_) => 1,
            Error::Io(_) | Error::Format(_) => 2,
            Error::CheckpointMismatch(_) => 3,
        }
    }
}
