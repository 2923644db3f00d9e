use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no {0} edges")]
    EmptyEdges(&'static str),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("cannot sample a negative group for user {0}: every group is a training positive")]
    NoNegative(usize),

    #[error("non-finite gradient in {block} block at index {index}")]
    NonFiniteGradient { block: &'static str, index: usize },

    #[error("non-finite loss at epoch {epoch}: {breakdown}")]
    NonFiniteLoss { epoch: usize, breakdown: String },

    #[error("trace is missing intermediates: {0}")]
    MissingTrace(String),

    #[error("entity count mismatch: {0}")]
    CountMismatch(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
