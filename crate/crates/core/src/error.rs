//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot normalize all-zero features")]
    ZeroNorm,

    #[error("reference set is empty")]
    EmptyReferences,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("weight file: {0}")]
    WeightFile(#[from] WeightFileError),

    #[error("descriptor file: {0}")]
    DescriptorFile(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failure modes when reading a serialized weight file. Kept as separate
/// variants so callers can distinguish a wrong file from a damaged one.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightFileError {
    #[error("bad magic bytes (not a weight file)")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file truncated: expected {expected} more bytes")]
    Truncated { expected: usize },

    #[error("payload checksum mismatch")]
    ChecksumMismatch,

    #[error("malformed record: {0}")]
    Malformed(String),
}
