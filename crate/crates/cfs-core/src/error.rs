use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CfsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigen solver did not converge on a {dim}x{dim} matrix")]
    EigenFailure { dim: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("parameter tau = {tau} outside (-{tau_max}, {tau_max})")]
    TauOutOfRange { tau: f64, tau_max: f64 },
    #[error("quadrature did not converge: value {value}, error estimate {error}")]
    Quadrature { value: f64, error: f64 },
    #[error("model error: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, CfsError>;
