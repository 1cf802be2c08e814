use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("ball of radius {radius} escapes the box of half-length {half_length} (limit {limit})")]
    BallEscapesBox {
        radius: f64,
        half_length: f64,
        limit: f64,
    },
    #[error("invalid norm parameters: {0}")]
    InvalidNorm(String),
    #[error("field grids do not match")]
    GridMismatch,
    #[error("invalid frequency: {0}")]
    InvalidFrequency(String),
    #[error("operation unsupported for raw frequencies")]
    RawUnsupported,
    #[error("support radius {support} exceeds the allowed radius {limit}")]
    SupportTooLarge { support: f64, limit: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("iteration produced non-finite values at step {step}")]
    NonFinite {
        step: usize,
        trace: Box<crate::cgo::IterationTrace>,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("no candidate frame satisfied the constraint after {draws} draws")]
    NoCandidate { draws: usize },
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
