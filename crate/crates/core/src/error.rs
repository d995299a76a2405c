//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's contract (dimension mismatch,
    /// empty batch, out-of-range value, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A run or strategy configuration is unusable.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A dataset file exists but does not parse (bad magic, count
    /// mismatch, out-of-range label, ...).
    #[error("data format: {0}")]
    DataFormat(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn data_format(msg: impl Into<String>) -> Self {
        Error::DataFormat(msg.into())
    }
}
