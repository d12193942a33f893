use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure while decoding a feature file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("bad magic bytes at offset {offset}")]
    BadMagic { offset: u64 },
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { offset: u64, version: u16 },
    #[error("unsupported dtype {dtype} at offset {offset}")]
    UnsupportedDtype { offset: u64, dtype: u8 },
    #[error("invalid feature dimension {dim} at offset {offset}")]
    BadDimension { offset: u64, dim: u32 },
    #[error("truncated at offset {offset}: expected {expected} records, found {found}")]
    Truncated { offset: u64, expected: u32, found: u32 },
    #[error("{extra} trailing bytes after last record at offset {offset}")]
    TrailingBytes { offset: u64, extra: u64 },
    #[error("non-finite feature value at offset {offset}")]
    NonFinite { offset: u64 },
    #[error("line {line} (byte offset {offset}): {msg}")]
    Text { line: usize, offset: u64, msg: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("degenerate vector: norm {norm:e} is below {eps:e} (collapsed projector?)")]
    DegenerateVector { norm: f64, eps: f64 },
    #[error("parameter is frozen: {0}")]
    FrozenParameter(String),
    #[error("unsupported for ensemble mode {0}")]
    UnsupportedMode(String),
    #[error("non-finite value in {0} after optimizer step")]
    NonFinite(String),
    #[error("session {session}: class {class} already appears in session {previous}")]
    LabelOverlap {
        session: usize,
        class: u32,
        previous: usize,
    },
    #[error("session {session}: class {class} has {found} training examples, expected {expected}")]
    ShotCount {
        session: usize,
        class: u32,
        found: usize,
        expected: usize,
    },
    #[error("session {session}: expected {expected} classes, found {found}")]
    WayCount {
        session: usize,
        expected: usize,
        found: usize,
    },
    #[error("session {session}: feature dimension {found}, expected {expected}")]
    DimMismatch {
        session: usize,
        expected: usize,
        found: usize,
    },
    #[error("session {session}: test class {class} is not in the session's label space")]
    ForeignTestClass { session: usize, class: u32 },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }
}
