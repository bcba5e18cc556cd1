use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("grammar error: {0}")]
    Grammar(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for failures caused by numerical divergence rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }

    /// True for failures caused by malformed or inconsistent input files.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Format { .. } | Error::Data(_) | Error::Empty(_) | Error::Io(_) | Error::Checkpoint(_)
        )
    }
}
