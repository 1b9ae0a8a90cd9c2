use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Which tensor axis a shape check failed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Batch,
    Channels,
    Height,
    Width,
}

impl std::fmt::Display for Dim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Dim::Batch => "batch",
            Dim::Channels => "channels",
            Dim::Height => "height",
            Dim::Width => "width",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {dim} mismatch (expected {expected}, got {actual})")]
    ShapeMismatch {
        op: &'static str,
        dim: Dim,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported kernel size {0} (only 1 and 3 are implemented)")]
    UnsupportedKernel(usize),

    #[error("invalid argument for {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{source_name}:{line}: {reason}")]
    Parse {
        source_name: String,
        line: usize,
        reason: String,
    },

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}: input is empty")]
    Empty(&'static str),

    #[error("loss state: {0}")]
    State(String),

    #[error("unknown error type `{0}`")]
    UnknownErrorType(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}
