use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: {component} is {value}")]
    Divergence { step: u64, component: String, value: f64 },

    #[error("parse error in {path}: {field} at byte {offset}: {reason}")]
    Parse { path: PathBuf, field: String, offset: u64, reason: String },

    #[error("{component} is not finite: {value}")]
    NonFinite { component: String, value: f64 },

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status: 1 for divergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::NonFinite { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
