use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the core computations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("validation failed at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("topology mismatch: graph has {graph} nodes, features have {features}")]
    TopologyMismatch { graph: usize, features: usize },
    #[error("k*d = {needed} exceeds the {available} available candidates")]
    DilationTooLarge { needed: usize, available: usize },
    #[error("node index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("image size mismatch: {0}")]
    SizeMismatch(String),
    #[error("cannot 2x2-pool an odd {height}x{width} grid")]
    OddGrid { height: usize, width: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("edge queue closed by the consumer")]
    QueueClosed,
    #[error("timelines describe different runs: {0}")]
    SpecMismatch(String),
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}
