use thiserror::Error;

/// Errors raised by reward validation, aggregation, and training.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RvpoError {
    #[error("reward at generation {generation}, channel {channel} is not finite ({value})")]
    NonFinite {
        generation: usize,
        channel: usize,
        value: f64,
    },
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("reward matrix has no channels")]
    NoChannels,
    #[error("no active channels in mask")]
    NoActiveChannels,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("weight for channel {channel} must be positive and finite, got {value}")]
    InvalidWeight { channel: usize, value: f64 },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("risk coefficient must be non-negative, got {0}")]
    NegativeCoefficient(f64),
    #[error("aggregation over an empty set of active values")]
    EmptyRow,
    #[error("score at generation {generation}, channel {channel} is not binary ({value})")]
    NonBinaryScore {
        generation: usize,
        channel: usize,
        value: f64,
    },
    #[error("advantage {index} is not finite ({value})")]
    NonFiniteAdvantage { index: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("batch is empty")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, RvpoError>;
