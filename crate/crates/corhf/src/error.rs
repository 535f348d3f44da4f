use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("dimension mismatch: {what} is {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("{name} = {value} is outside its valid range ({requirement})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },

    #[error("quantile {0} must lie strictly inside (0, 1)")]
    QuantileRange(f64),

    #[error("scaling function is zero over the entire support")]
    DegenerateScaling,

    #[error("every conditional copula weight underflowed to zero")]
    DegenerateConditioning,

    #[error("duration {duration} is not an integer multiple of the step size {dt}")]
    NonIntegerSteps { duration: f64, dt: f64 },

    #[error("{filter} analysis failed: {message}")]
    FilterFailure {
        filter: &'static str,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
