use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("I/O error on {path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("truncated input at byte {offset}: {msg}")]
    Truncated { offset: u64, msg: String },

    #[error("invalid UTF-8 at byte {offset}")]
    Decode { offset: usize },

    #[error("parse error in {file} at byte {offset}: {msg}")]
    Parse {
        file: String,
        offset: usize,
        msg: String,
    },

    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("kernel {kernel} requires {required} input, histogram is {found}")]
    NormMismatch {
        kernel: &'static str,
        required: &'static str,
        found: &'static str,
    },

    #[error("class `{0}` has no in-vocabulary tokens to cluster")]
    EmptyClassPool(String),

    #[error("provenance mismatch: expected {expected}, found {found}")]
    Provenance { expected: String, found: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at_path(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Error::Path { path, source }
    }

    /// True for errors caused by malformed or missing input data, as opposed
    /// to invalid arguments.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Path { .. }
                | Error::Format { .. }
                | Error::Truncated { .. }
                | Error::Decode { .. }
                | Error::Parse { .. }
                | Error::Line { .. }
                | Error::EmptyClassPool(_)
        )
    }
}
