use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch { what: &'static str, left: usize, right: usize },

    #[error("embedding must have at least one component")]
    EmptyEmbedding,

    #[error("non-finite value at component {index}")]
    NonFinite { index: usize },

    #[error("zero-norm embedding cannot define a cosine weight")]
    ZeroNorm,

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),

    #[error("reduced set size {size} is invalid for {samples} samples")]
    InvalidReducedSize { size: usize, samples: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported spec_version {found} (supported up to {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),

    #[error("reduced set for model {0:?} is not cached and construction is disabled")]
    MissingReducedSet(String),

    #[error("k = {k} is outside 1..={models}")]
    KOutOfRange { k: usize, models: usize },

    #[error("model {0:?} is not part of the ranking")]
    UnknownModel(String),

    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Maps a serde_json error onto a byte offset within `input`.
    pub(crate) fn from_json(err: &serde_json::Error, input: &[u8]) -> Self {
        Error::Parse { offset: byte_offset(input, err.line(), err.column()), message: err.to_string() }
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
pub(crate) fn byte_offset(input: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut start = 0;
    for _ in 1..line {
        match input[start..].iter().position(|&b| b == b'\n') {
            Some(pos) => start += pos + 1,
            None => return input.len(),
        }
    }
    (start + column.saturating_sub(1)).min(input.len())
}
