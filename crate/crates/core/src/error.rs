use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and its numerical toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (shape, range, finiteness).
    #[error("usage error: {0}")]
    Usage(String),

    /// A numerical computation produced a nonfinite value. The round that
    /// triggered it is aborted.
    #[error("numerical abort in {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("model {0} does not support this operation")]
    UnsupportedModel(&'static str),

    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("not enough examples of class {class}: need {needed}, have {available}")]
    InsufficientClass {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
