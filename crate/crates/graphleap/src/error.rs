use std::io;
use std::path::PathBuf;

/// Problems decoding `.glpt`, `.glpg` and `.glpw` files.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("expected dtype {expected}, found {found}")]
    UnexpectedDtype { expected: u8, found: u8 },
    #[error("expected rank {expected}, found {found}")]
    UnexpectedRank { expected: usize, found: usize },
    #[error("dimensions {0:?} are zero or too large")]
    BadDims(Vec<u64>),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("non-finite value at element {index}")]
    NonFiniteValue { index: usize },
    /// Decoded cleanly but describes an invalid graph or mismatched weights.
    #[error("invalid contents: {0}")]
    Invalid(graphleap_core::Error),
    #[error("weight bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The configuration document is not well-formed.
    #[error("parse error: {0}")]
    Parse(String),
    /// A configuration or input that is well-formed but not acceptable.
    #[error("invalid configuration: {0}")]
    Config(graphleap_core::Error),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error(transparent)]
    Core(#[from] graphleap_core::Error),
    #[error("worker failed: {0}")]
    Worker(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn validation(path: &str, message: impl Into<String>) -> Self {
        Error::Config(graphleap_core::Error::Validation {
            path: path.into(),
            message: message.into(),
        })
    }

    pub(crate) fn file(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Error::File { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>) -> impl FnOnce(FormatError) -> Self {
        let path = path.into();
        move |source| Error::Format { path, source }
    }

    /// Process exit code: 2 for problems with what the user supplied,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Config(_) | Error::File { .. } | Error::Format { .. } => 2,
            Error::Core(_) | Error::Worker(_) => 1,
        }
    }
}
