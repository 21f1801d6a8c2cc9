use std::path::PathBuf;

/// Errors produced by the hashing, scoring, training and data layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("zero-norm input vector cannot be normalized")]
    ZeroVector,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0}")]
    Undefined(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: at byte offset {offset}: {message}")]
    Format {
        context: String,
        offset: u64,
        message: String,
    },

    #[error("{context}: {message}")]
    Data { context: String, message: String },

    #[error("encoder fingerprint mismatch: index built with {stored:016x}, encoder is {actual:016x}")]
    Fingerprint { stored: u64, actual: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by numerics (non-finite values, undefined metrics)
    /// rather than by malformed input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Undefined(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
