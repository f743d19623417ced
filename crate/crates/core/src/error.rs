use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss must be a scalar, got shape {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },

    #[error("empty topic vocabulary")]
    EmptyTopicVocabulary,

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty instance set")]
    EmptyInstances,

    #[error("empty topic set")]
    EmptyTopicSet,

    #[error("diverged: non-finite gradient for parameter {0}")]
    Diverged(String),

    #[error("word not in reference statistics: {0}")]
    UnknownWord(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
