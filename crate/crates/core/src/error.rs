use thiserror::Error;

/// Classified failures of the UWS container parser. Every variant carries the
/// byte offset at which the problem was detected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("bad magic at offset {offset}: expected \"UWS1\", found {found:?}")]
    BadMagic { offset: usize, found: Vec<u8> },
    #[error("truncated input at offset {offset}: need {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: u64,
        available: u64,
    },
    #[error("manifest at offset {offset} is not valid: {reason}")]
    Manifest { offset: usize, reason: String },
    #[error("unknown dtype {dtype:?} for layer {layer:?} (manifest at offset {offset})")]
    UnknownDtype {
        offset: usize,
        layer: String,
        dtype: String,
    },
    #[error("length mismatch at offset {offset}: {reason}")]
    LengthMismatch { offset: usize, reason: String },
    #[error("non-finite value in layer {layer:?} at offset {offset}")]
    NonFinite { offset: usize, layer: String },
}

impl ParseError {
    /// Byte offset (from the start of the container) where the error was detected.
    pub fn offset(&self) -> usize {
        match self {
            ParseError::BadMagic { offset, .. }
            | ParseError::Truncated { offset, .. }
            | ParseError::Manifest { offset, .. }
            | ParseError::UnknownDtype { offset, .. }
            | ParseError::LengthMismatch { offset, .. }
            | ParseError::NonFinite { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    #[error("rank-deficient normal equations (smallest/largest eigenvalue {ratio:.3e}); retry with ridge epsilon {suggested_ridge:.3e}")]
    RankDeficient { ratio: f64, suggested_ridge: f64 },
    #[error("internal consistency: {0}")]
    Internal(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
