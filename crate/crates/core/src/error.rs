use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid pin plan: {0}")]
    InvalidPlan(String),

    #[error("image dimension mismatch: expected {expected}, found {found}")]
    ImageMismatch { expected: String, found: String },

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("blank statistics do not match: {0}")]
    StatsMismatch(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("truncated input at byte offset {offset}: {msg}")]
    Truncated { offset: u64, msg: String },

    #[error("checksum mismatch at byte offset {offset}: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum {
        offset: u64,
        stored: u64,
        computed: u64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
