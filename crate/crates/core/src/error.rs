use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the model, inference, training and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label {label} is unreachable at position {position}")]
    UnreachableLabel { label: usize, position: usize },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("sequence {0} has no gold labels")]
    MissingLabels(usize),

    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
