use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the binary and line-oriented file formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error("header checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("truncated input at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: u64, needed: usize },
    #[error("dimension inconsistency: {0}")]
    DimMismatch(String),
    #[error("unknown section kind {kind} at byte offset {offset}")]
    UnknownSection { kind: u8, offset: u64 },
    #[error("invalid UTF-8 key at byte offset {offset}")]
    BadKey { offset: u64 },
    #[error("malformed record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("trailing bytes after last section at offset {offset}")]
    TrailingBytes { offset: u64 },
}

#[derive(Debug, Error)]
pub enum CxError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing data: {0}")]
    Missing(String),
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
    #[error("oracle is not trainable: {0}")]
    NotTrainable(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("experiment cell {cell} failed: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<CxError>,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CxError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CxError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CxError> = std::result::Result<T, E>;
