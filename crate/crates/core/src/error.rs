use std::path::PathBuf;

use crate::federation::Rejection;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error in tensor '{tensor}': {reason}")]
    Format { tensor: String, reason: String },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("round {round} poisoned by client '{client}': {rejection}")]
    PoisonedRound {
        round: usize,
        client: String,
        rejection: Rejection,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(tensor: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            tensor: tensor.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
