use thiserror::Error;

/// Errors raised by the navigation, learning and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("latitude {0} rad is at or beyond a pole")]
    PolarSingularity(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("window length {got} does not match the expected {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("stream underrun at IMU index {index}: {what}")]
    StreamUnderrun { index: usize, what: &'static str },
    #[error("singular innovation covariance")]
    Singular,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
