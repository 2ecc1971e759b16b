//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Byte-level parse failure (PPM headers, annotation files, manifests).
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u8, expected: u8 },

    #[error("checkpoint shape mismatch for `{name}`: file has {found:?}, expected {expected:?}")]
    CheckpointShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("checkpoint truncated at byte {offset}: {needed} more bytes expected")]
    CheckpointTruncated { offset: usize, needed: usize },

    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset generation failed: {0}")]
    Generation(String),

    /// First non-finite value observed during a training step; `op` names
    /// the operation that produced it.
    #[error("non-finite value produced by op `{op}`")]
    Numeric { op: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
