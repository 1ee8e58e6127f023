use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Parse failures for the on-disk formats. Each failure mode is its own
/// variant so callers can tell a corrupt header from a short file.
#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported {what} version {version}")]
    UnsupportedVersion { what: &'static str, version: u16 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{found} trailing bytes after payload")]
    TrailingBytes { found: usize },
    #[error("zero dimension: rows={rows}, cols={cols}")]
    ZeroDims { rows: usize, cols: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid frame period {0}")]
    InvalidPeriod(f64),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: empty unit list for {id:?}")]
    EmptyUnits { line: usize, id: String },
    #[error("line {line}: bad token {token:?}")]
    BadToken { line: usize, token: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: FormatError },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("unknown utterance {0:?}")]
    MissingUtterance(String),
    #[error("not computable: {0}")]
    NotComputable(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Parse { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
