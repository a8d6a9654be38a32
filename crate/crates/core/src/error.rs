use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("capacity exceeded: dimension {dim} is above the limit {limit}")]
    CapacityExceeded { dim: usize, limit: usize },

    #[error("numerical failure: {message} (residual {residual:e})")]
    NumericalFailure { message: String, residual: f64 },

    #[error("hamiltonian assembly failed: hermiticity defect {defect:e}")]
    AssemblyFailure { defect: f64 },

    #[error("normalization failure: trace defect {defect:e}")]
    NormalizationFailure { defect: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("observables are linearly dependent (smallest covariance eigenvalue {min_eigenvalue:e})")]
    DependentObservables { min_eigenvalue: f64 },

    #[error("channel is empty (fed weight {weight:e})")]
    EmptyChannel { weight: f64 },

    #[error("source feeds nothing (trace of sigma {trace:e})")]
    EmptyFeed { trace: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>, residual: f64) -> Self {
        Error::NumericalFailure {
            message: message.into(),
            residual,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidRequest(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
