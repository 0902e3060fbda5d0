use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient input: {0}")]
    InsufficientInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Store(#[from] StoreError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Decoding failures for the on-disk dictionary and model formats.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file in section `{section}`: need {needed} bytes, {available} available")]
    Truncated {
        section: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("{extra} trailing bytes after the last section")]
    TrailingBytes { extra: usize },

    #[error("invalid header field `{field}`: {reason}")]
    InvalidHeader { field: &'static str, reason: String },

    #[error("nonzero padding bits in section `{section}`")]
    NonZeroPadding { section: &'static str },

    #[error("non-finite value in section `{section}`")]
    NonFinite { section: &'static str },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
