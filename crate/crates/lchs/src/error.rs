use thiserror::Error;

#[derive(Debug, Error)]
pub enum LchsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not Hermitian: {0}")]
    NotHermitian(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    /// The true solution has decayed below resolvable magnitude; success
    /// amplification counts would overflow and the relative target is
    /// meaningless.
    #[error("solution norm collapsed: {0}")]
    DecayedSolution(String),

    #[error("validation failure: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LchsError>;
