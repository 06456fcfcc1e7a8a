use thiserror::Error;

/// Errors produced by the optimizer, the surrogate model and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid strategy parameter: {0}")]
    InvalidParams(String),

    #[error("step-size must be positive and finite, got {0}")]
    NonPositiveStepSize(f64),

    #[error("expected {expected} candidates/fitness values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite fitness value at position {0}")]
    NonFiniteFitness(usize),

    #[error("eigendecomposition is stale or invalid")]
    StaleEigendecomposition,

    #[error("surrogate training failed: {0}")]
    Training(String),

    #[error("surrogate model has not been trained")]
    UntrainedModel,

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("unknown function id {0}")]
    UnknownFunction(u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("objective evaluation failed: {0}")]
    Objective(String),

    #[error("malformed record file at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
