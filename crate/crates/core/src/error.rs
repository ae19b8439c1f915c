use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the attack pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid node pair ({r}, {c}) for n = {n}: need r < c < n")]
    InvalidPair { r: usize, c: usize, n: usize },

    #[error("pair index {index} out of range for n = {n} ({count} pairs)")]
    InvalidIndex { index: u64, n: usize, count: u64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("certificate oracle does not certify p = 1.0; no threshold exists")]
    NoThreshold,

    #[error("malformed container {path}: {reason}")]
    Container { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
