use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the encoding and retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimension or geometry mismatch between inputs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("not found: {0}")]
    NotFound(String),

    /// Input that is structurally valid but empty where data is required.
    #[error("empty input: {0}")]
    Empty(String),

    /// Codes or models belonging to different embeddings were mixed.
    #[error("embedding mismatch: expected `{expected}`, got `{actual}`")]
    EmbeddingMismatch { expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Optimisation diverged or produced non-finite values.
    #[error("numerical failure: {reason} (last finite loss {last_finite_loss:?})")]
    Numerical {
        reason: String,
        last_finite_loss: Option<f64>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn numerical(reason: impl Into<String>) -> Self {
        Error::Numerical {
            reason: reason.into(),
            last_finite_loss: None,
        }
    }

    /// Process exit code used by the command line tool.
    ///
    /// 2 for configuration problems, 3 for data problems, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Numerical { .. } => 4,
            Error::Shape(_)
            | Error::NotFound(_)
            | Error::Empty(_)
            | Error::EmbeddingMismatch { .. }
            | Error::Format { .. }
            | Error::Io { .. } => 3,
        }
    }
}
