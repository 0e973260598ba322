use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid {what}: {reason}")]
    Validation { what: &'static str, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cell {0} is out of bounds")]
    OutOfBounds(usize),

    #[error("wind estimation needs at least one observation")]
    NoObservations,

    #[error("wind system is singular: {cells} free cells form a component without observations")]
    Underdetermined { cells: usize },

    #[error("wind solve did not converge: relative residual {residual:e} after {iterations} iterations")]
    IllConditioned { iterations: usize, residual: f64 },

    #[error("every candidate has zero likelihood")]
    DegeneratePosterior,

    #[error("distribution support mismatch: {0}")]
    SupportMismatch(String),

    #[error("cell {to} is unreachable from cell {from}")]
    Unreachable { from: usize, to: usize },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::Config(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
