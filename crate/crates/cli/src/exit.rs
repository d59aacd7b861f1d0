use std::fmt;

use dpaudit::Error;

/// A failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2.
    Config(String),
    /// Exit 3.
    Oracle(String),
    /// Exit 4.
    Numeric(String),
    /// Exit 1: I/O and malformed data files.
    Other(String),
}

impl CliError {
    pub fn config(e: Error) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Oracle(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Config(m) => ("config error", m),
            CliError::Oracle(m) => ("oracle failure", m),
            CliError::Numeric(m) => ("numeric failure", m),
            CliError::Other(m) => ("error", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) => CliError::Config(msg),
            Error::Oracle(_) | Error::InsufficientRows { .. } => CliError::Oracle(msg),
            Error::NonFinite(_)
            | Error::OutOfDomain { .. }
            | Error::InvalidCounts(_)
            | Error::DivisionByZero(_)
            | Error::DimensionMismatch { .. }
            | Error::Empty(_) => CliError::Numeric(msg),
            Error::Record { .. } | Error::Io(_) | Error::Json(_) => CliError::Other(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
