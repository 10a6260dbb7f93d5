use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty mask: no block passed the variance threshold")]
    EmptyMask,

    #[error("empty template: no valid cylinder")]
    EmptyTemplate,

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch { expected: (u32, u32), actual: (u32, u32) },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("analysis window ({window} px) larger than image ({width}x{height})")]
    WindowTooLarge { window: usize, width: u32, height: u32 },

    #[error("feature kind mismatch: {0} vs {1}")]
    KindMismatch(crate::FeatureKind, crate::FeatureKind),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty score list")]
    EmptyScores,

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Template / map binary decoding failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated stream: needed {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("invalid field: {0}")]
    InvalidField(String),
}
