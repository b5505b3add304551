use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate claim for source `{source_id}` on object `{object_id}` (line {line})")]
    Conflict {
        source_id: String,
        object_id: String,
        line: usize,
    },

    #[error("claim input is empty")]
    EmptyInput,

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("every grid configuration failed; last error: {0}")]
    AllFitsFailed(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
