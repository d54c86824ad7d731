use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while reading a dataset container.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataError {
    #[error("bad magic: expected \"CLDS1\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("truncated container: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("record {index} has label {label} but the container declares {classes} classes")]
    LabelOverflow {
        index: usize,
        label: u16,
        classes: u32,
    },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward called on a value that does not depend on any differentiable input")]
    Detached,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("batch norm {0} evaluated before running statistics were initialised")]
    UninitialisedStats(String),
    #[error("task {task} is frozen: {msg}")]
    Frozen { task: usize, msg: String },
    #[error("unknown task {0}")]
    UnknownTask(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("degenerate gradient summary: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid_shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::Checkpoint { .. } => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::NonFinite(_) => 4,
            _ => 1,
        }
    }
}
