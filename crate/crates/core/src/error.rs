use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Graph data that violates a structural invariant (unknown ids, bad edges).
    #[error("structural error: {0}")]
    Structural(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty sample set")]
    EmptySample,

    #[error("training diverged at task {task}, epoch {epoch}: {reason}")]
    Divergence {
        task: usize,
        epoch: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("checksum mismatch for {0}")]
    Checksum(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Structural(_) => "structural",
            Error::NotFound(_) => "not-found",
            Error::Precondition(_) => "precondition",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::EmptySample => "empty-sample",
            Error::Divergence { .. } => "divergence",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Checksum(_) => "checksum",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
