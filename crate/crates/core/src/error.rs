use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was not met by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Every token of a description fell outside the word-vector vocabulary.
    #[error("description has no in-vocabulary tokens")]
    EmptyDescription,

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed or inconsistent data (bad magic, dimension mismatch, missing keys).
    #[error("format error: {0}")]
    Format(String),

    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
