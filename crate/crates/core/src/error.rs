use thiserror::Error;

use crate::backends::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid language code {0:?}: expected 2-3 lowercase ASCII letters")]
    InvalidLanguage(String),

    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("requested {requested} items but only {available} are eligible")]
    NotEnough { requested: usize, available: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("missing predictions for {} example(s): {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),

    #[error("translation of {field} failed for example {id:?}: {source}")]
    Translation {
        id: String,
        field: &'static str,
        #[source]
        source: BackendError,
    },

    #[error("empty completion")]
    EmptyCompletion,

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Whether the error originated in a generation or translation backend.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_) | Error::Translation { .. })
    }
}
