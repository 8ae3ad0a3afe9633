use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point ({x}, {y}) lies outside the grid box [{x0}, {x1}] x [{y0}, {y1}]")]
    OutOfGrid {
        x: f64,
        y: f64,
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
    },

    #[error("position {x} lies outside the path horizon [0, {horizon}]")]
    OutOfHorizon { x: f64, horizon: f64 },

    #[error("circulant embedding too small: clipped spectral fraction {fraction:.3e} exceeds {bound:.3e} at padding {padding}")]
    EmbeddingTooSmall {
        fraction: f64,
        bound: f64,
        padding: usize,
    },

    #[error("covariance matrix is not numerically positive definite")]
    NotPositiveDefinite,

    #[error("grids are not nested: {0}")]
    NotNested(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-positive pivot {pivot:e} at unknown {index}; coefficient is not strictly positive")]
    NonPositivePivot { index: usize, pivot: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("reference node ({x}, {y}) is not covered by any triangle")]
    Uncovered { x: f64, y: f64 },

    #[error("sample {sample} on level {level} (seed {seed}) failed: {source}")]
    Sample {
        level: usize,
        sample: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
