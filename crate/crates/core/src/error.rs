//! Error type shared across the crate.
//!
//! Every error carries enough context to be printed as-is; [`Error::kind`]
//! maps it onto the coarse process exit classes used by the CLI.

use std::fmt;
use std::path::Path;

/// Coarse error class, used for CLI exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid configuration, shape mismatch or API contract violation (exit 1).
    Config,
    /// Missing, malformed or inconsistent input data (exit 2).
    Data,
    /// Non-finite value or failed numeric check (exit 3).
    Numeric,
}

#[derive(Debug)]
pub enum Error {
    /// Bad configuration value or combination.
    Config(String),
    /// Caller violated an operation's precondition.
    Contract(String),
    /// Tensor shape incompatibility; message names both shapes.
    Shape(String),
    /// Dataset layout / content problem.
    Data(String),
    /// Byte-level parse failure, with the offset of the offending byte.
    ParseAt { offset: usize, what: String },
    /// Filesystem failure, annotated with the path involved.
    Io {
        path: String,
        source: std::io::Error,
    },
    /// Non-finite value detected, or a numeric assertion failed.
    Numeric(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Shape(_) => ErrorKind::Config,
            Error::Data(_) | Error::ParseAt { .. } | Error::Io { .. } => ErrorKind::Data,
            Error::Numeric(_) => ErrorKind::Numeric,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::ParseAt { offset, what } => {
                write!(f, "parse error at byte {offset}: {what}")
            }
            Error::Io { path, source } => write!(f, "io error on {path}: {source}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
