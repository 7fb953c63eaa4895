use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in {field}: {msg}")]
    Format { field: &'static str, msg: String },
    #[error("invalid argument `{name}`: {msg}")]
    Argument { name: &'static str, msg: String },
    #[error("invalid config at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(field: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            field,
            msg: msg.into(),
        }
    }

    pub(crate) fn arg(name: &'static str, msg: impl Into<String>) -> Self {
        Error::Argument {
            name,
            msg: msg.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by the caller's input (bad flags or config)
    /// rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Argument { .. } | Error::Config { .. } | Error::UnknownStrategy { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
