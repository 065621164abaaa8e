use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),

    #[error("gradient root must be a 1x1 scalar, got {0}x{1}")]
    NonScalarLoss(usize, usize),

    #[error("no gradient supplied for trainable parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),

    #[error("batch normalization in train mode needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("{file}:{line}: unresolved node {symbol}")]
    UnresolvedNode {
        file: PathBuf,
        line: usize,
        symbol: String,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown node `{node}` at level `{level}`")]
    UnknownNode { level: String, node: String },

    #[error("unknown level `{0}`")]
    UnknownLevel(String),

    #[error("invalid knowledge: {0}")]
    Knowledge(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
