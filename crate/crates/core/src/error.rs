use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or argument value is out of its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An observation does not belong to the model's vocabulary.
    #[error("token id {token} at position {position} is outside a vocabulary of size {vocab_size}")]
    Domain {
        token: usize,
        position: usize,
        vocab_size: usize,
    },

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced a non-finite or otherwise unusable result.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training job {job} failed: {source}")]
    Job { job: usize, source: Box<Error> },

    #[error("sequence {index}: {source}")]
    Sequence { index: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// The innermost error, looking through job and sequence wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Job { source, .. } | Error::Sequence { source, .. } => source.root(),
            other => other,
        }
    }
}
