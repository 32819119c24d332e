use thiserror::Error;

/// Errors raised by the detector and its supporting structures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("observation has non-finite value at position {index}")]
    NonFinite { index: usize },

    #[error("observation must have at least one component")]
    EmptyObservation,

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("split index {split} out of range for a chain of {buckets} buckets")]
    SplitOutOfRange { split: usize, buckets: usize },

    #[error("bucket structure violated: {0}")]
    Structure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, Error>;
