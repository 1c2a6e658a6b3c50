//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("covariance is not symmetric within tolerance")]
    NotSymmetric,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid component parameter: {0}")]
    InvalidComponent(String),

    #[error("mixture families do not match")]
    FamilyMismatch,

    #[error("mixture orders do not match: {left} vs {right}")]
    OrderMismatch { left: usize, right: usize },

    #[error("mixture order {0} exceeds the supported maximum {1}")]
    UnsupportedOrder(usize, usize),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("density underflow at observation {row}")]
    DensityUnderflow { row: usize },

    #[error("EM failure: {0}")]
    Em(String),

    #[error("transport solver failure: {0}")]
    Transport(String),

    #[error("aggregation failure: {0}")]
    Aggregation(String),

    #[error("failure injection: {0}")]
    Injection(String),

    #[error("metric failure: {0}")]
    Metric(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
