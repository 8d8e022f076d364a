use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("integrand not differentiable at xi = {xi:?}")]
    NotDifferentiable { xi: Vec<f64> },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("time series is empty")]
    EmptySeries,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("trajectory has no dual frames")]
    MissingDual,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("inner solver did not converge at step {step} after {iters} iterations")]
    NonConvergence {
        step: usize,
        iters: usize,
        best: Box<crate::solver::StepOutput>,
    },
    #[error("cylinder not compactly inside the space-time domain: {0}")]
    CylinderOutOfDomain(String),
    #[error("test function rejected: {0}")]
    InvalidTestFunction(String),
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
