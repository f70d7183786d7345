use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("input vector has zero norm")]
    ZeroNorm,

    #[error("non-finite input")]
    NonFinite,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("unknown category {0}")]
    UnknownCategory(usize),

    #[error("category {0} has no occupied slots")]
    EmptyCategory(usize),

    #[error("operation requires the {expected} policy, bank uses {actual}")]
    WrongPolicy {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("target {target} is not a valid column (have {columns})")]
    InvalidTarget { target: usize, columns: usize },

    #[error("cannot satisfy separation cap {cap} with {count} prototypes in {dim} dimensions")]
    SeparationUnsatisfiable { cap: f64, count: usize, dim: usize },

    #[error("bad magic number")]
    BadMagic,

    #[error("version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("corrupt bank file: {0}")]
    Corrupt(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::InvalidDimension(_))
    }
}
