use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("Hermite order {order} exceeds the supported maximum {max}")]
    OrderRange { order: usize, max: usize },

    #[error("function evaluation produced a non-finite value {value} at x = {x}")]
    Evaluation { x: f64, value: f64 },

    #[error("rank violation: {0}")]
    Rank(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("correlation model error: {0}")]
    Model(String),

    #[error("simulation failed: covariance embedding not PSD (most negative eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    /// Process exit code associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Parse(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
