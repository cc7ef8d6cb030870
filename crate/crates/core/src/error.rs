use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{path}: row {row}: {message}")]
    Parse { path: PathBuf, row: usize, message: String },

    #[error("{path}: {message}")]
    TraceFormat { path: PathBuf, message: String },

    #[error("exact solver refused: {binaries} binary variables exceed the limit of {limit}; use the greedy solver")]
    SolverGuard { binaries: usize, limit: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
