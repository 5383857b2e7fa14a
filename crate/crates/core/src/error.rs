use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("referential integrity: {0}")]
    Referential(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("feature layout mismatch: model was trained with {expected}, got {actual}")]
    Layout { expected: String, actual: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("oracle failed for pair ({query_id}, {item_id}): {source}")]
    Oracle {
        query_id: String,
        item_id: String,
        #[source]
        source: OracleError,
    },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failure modes of a relevance oracle call.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("replay file has no entry for query {query:?} / item {item:?}")]
    ReplayMiss { query: String, item: String },

    #[error("http request failed after {attempts} attempts: {message}")]
    Http { attempts: u32, message: String },

    #[error("malformed oracle response: {0}")]
    Malformed(String),
}
