use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("matrix is numerically singular (pivot {pivot:.3e} below threshold {threshold:.3e})")]
    Singular { pivot: f64, threshold: f64 },

    #[error("characteristic matrix is singular at lambda = {lambda}")]
    CharacteristicRoot { lambda: Complex64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last defect {defect:.3e})")]
    Convergence { iterations: usize, defect: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
