use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the audit pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(f64),

    #[error("{what} out of domain: {value}")]
    OutOfDomain { what: &'static str, value: f64 },

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("oracle failure: {0}")]
    Oracle(#[from] crate::oracles::OracleError),

    #[error("collected {got} of {need} clean rows for the {arm} context")]
    InsufficientRows {
        arm: &'static str,
        got: usize,
        need: usize,
    },

    #[error("malformed record at {path}:{line}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
