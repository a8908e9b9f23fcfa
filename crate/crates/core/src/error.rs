use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("line {index} has {len} tokens, longer than the maximum length {max_len}")]
    LineTooLong {
        index: usize,
        len: usize,
        max_len: usize,
    },

    #[error("line {0} has no tokens")]
    EmptyLine(usize),

    #[error("unknown token {token:?} on line {index}")]
    UnknownToken { index: usize, token: String },

    #[error("vocabulary has {size} entries, above the configured cap {cap}")]
    VocabTooLarge { size: usize, cap: usize },

    #[error("no two-cut segmentation exists for sequence length {0}")]
    NoSegmentation(usize),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("cut point {t} outside 1..={max_len}")]
    CutOutOfRange { t: usize, max_len: usize },

    #[error("rollout target {target} must exceed prefix length {prefix}")]
    RolloutTarget { prefix: usize, target: usize },

    #[error("number of rollouts must be at least 1")]
    NoRollouts,

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("step {step} of soft sequence sums to {sum}, not 1")]
    OffSimplex { step: usize, sum: f64 },

    #[error("batch mismatch: {0}")]
    BatchMismatch(String),

    #[error("non-finite value during {0}")]
    NonFinite(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("bad checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by a bad configuration rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
