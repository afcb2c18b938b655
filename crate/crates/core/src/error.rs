use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Malformed cube or image file; `offset` is the byte where decoding failed.
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("value {value} at pixel {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },

    #[error("matrix is rank deficient at column {column}")]
    RankDeficient { column: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error(
        "landmark similarity block is singular (condition {condition:e}); \
         try more or different landmarks"
    )]
    SingularLandmarks { condition: f64 },

    #[error("approximate degree of node {node} is not positive ({degree:e}); graph too sparse for the Nystrom approximation")]
    NonPositiveDegree { node: usize, degree: f64 },

    #[error("no change detected between frames")]
    NoChangeDetected,

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
