use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes of the tensor file codec.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected \"CKVT\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated header: needed {needed} bytes, got {got}")]
    ShortRead { needed: usize, got: usize },
    #[error("payload holds {found} bytes but dims {dims:?} require {expected}")]
    SizeMismatch {
        dims: Vec<u64>,
        expected: usize,
        found: usize,
    },
    #[error("expected a rank-{expected} tensor, found rank {found}")]
    Rank { expected: usize, found: usize },
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("compression cannot reach budget {budget}: cache length {len} and ratio {ratio} yields no merges")]
    NonConvergence {
        len: usize,
        budget: usize,
        ratio: f64,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
