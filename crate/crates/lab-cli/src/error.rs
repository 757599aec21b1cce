use std::path::PathBuf;

use thiserror::Error;

/// Exit code for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code for numeric failures and unreadable artifacts.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code for invalid configs and command-line misuse.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum LabError {
    /// Invalid config; `path` is the offending field (`parameters.seeds`, ...).
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("{context}: {message}")]
    Numeric { context: String, message: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl LabError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config { path: path.into(), message: message.into() }
    }

    pub fn numeric(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        LabError::Numeric { context: context.into(), message: err.to_string() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        LabError::Format { path: path.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config { .. } | LabError::Usage(_) => EXIT_USAGE,
            LabError::Numeric { .. } | LabError::Io { .. } | LabError::Format { .. } => EXIT_FAILURE,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
