use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain of the probability model.
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid input (empty profiles, mismatched shapes, bad grids).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The exact enumeration would exceed its state budget.
    #[error("state space of {states} count vectors exceeds the cap of {cap}; use Monte Carlo (`simulate`) instead")]
    StateCap { states: u128, cap: u128 },

    /// Malformed predictions file, reported with its 1-based line number.
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: u64,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
