use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid node {index} out of range (valid 0..={max})")]
    Index { index: usize, max: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("operator failure at lambda={lambda}, x={x:?}: {reason}")]
    OperatorFailure { lambda: f64, x: Vec<f64>, reason: String },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("unsupported check: {0}")]
    UnsupportedCheck(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("coefficient evaluation produced a non-finite value at step {step}, particle {particle}")]
    CoefficientEvaluation { step: usize, particle: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("control energy {energy} exceeds budget {budget}")]
    ControlBudget { energy: f64, budget: f64 },

    #[error("inversion unavailable: {0}")]
    InversionUnavailable(String),

    #[error("slope fit unavailable: only {usable} usable points, need at least 4")]
    FitUnavailable { usable: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
