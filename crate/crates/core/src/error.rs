use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("partition does not cover point {index}")]
    Partition { index: usize },

    #[error("support mismatch at atom {index}: mass {mass} against zero reference")]
    Support { index: usize, mass: f64 },

    #[error("{0} is not applicable for p = {1}")]
    NotApplicable(&'static str, f64),

    #[error("no convergence after {iters} iterations (residual {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("fit needs at least {needed} usable points, got {got}")]
    Fit { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
