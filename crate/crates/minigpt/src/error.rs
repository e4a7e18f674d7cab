use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: usize, vocab_size: usize },

    #[error("unknown character {ch:?} at position {position}")]
    UnknownChar { ch: char, position: usize },

    #[error("cannot build a vocabulary from empty text")]
    EmptyText,

    #[error("{split} split has {len} tokens, needs at least {needed} for block size {block_size}")]
    SplitTooSmall { split: &'static str, len: usize, needed: usize, block_size: usize },

    #[error("softmax row {row} is entirely -inf (malformed mask)")]
    MalformedMask { row: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss diverged at step {step}: {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    ConfigFile { path: PathBuf, line: usize, message: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("loss log line {line}: {message}")]
    LossLog { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Failures while reading a checkpoint file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, expected \"MGPT\"")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {0}, expected 1")]
    UnsupportedVersion(u32),

    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: String },

    #[error("checkpoint metadata is not valid: {0}")]
    Metadata(String),

    #[error("checkpoint config does not match the requested model: {0}")]
    ConfigMismatch(String),

    #[error("unexpected tensor {found:?} (expected {expected:?})")]
    TensorLayout { expected: String, found: String },

    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
}
