use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward: variable {0} was not recorded on this tape")]
    NotRecorded(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("weight file has bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u32),

    #[error("weight file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("weight file contains no parameters")]
    EmptyWeights,

    #[error("weight `{name}` does not match the configuration: {msg}")]
    WeightMismatch { name: String, msg: String },

    #[error("non-finite loss {value} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, value: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidArgument {
        op,
        msg: msg.into(),
    }
}
