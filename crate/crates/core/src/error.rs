use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {x} outside the domain {domain}")]
    Domain { x: f64, domain: &'static str },

    #[error("second derivative undefined at discontinuity point {0}")]
    Discontinuity(f64),

    #[error("branch {branch} is malformed: {reason}")]
    MalformedBranch { branch: usize, reason: String },

    #[error("inverse of branch {branch} at y={y} did not converge (residual {residual:e})")]
    InverseNotConverged { branch: usize, y: f64, residual: f64 },

    #[error("map leaves the class: {0}")]
    LeavesClass(String),

    #[error("mesh mismatch between operands")]
    MeshMismatch,

    #[error("power iteration did not converge after {iterations} steps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("input must have zero average, integral is {0:e}")]
    NonZeroAverage(f64),

    #[error("cone constants cannot be certified: {0}")]
    NotCertifiable(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
