use thiserror::Error;

/// Errors raised by the numerical core and the experiment harness.
#[derive(Debug, Error)]
pub enum LcvError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not skew-symmetric: max |S + S^T| = {max_violation:e}")]
    NotSkewSymmetric { max_violation: f64 },

    #[error("matrix is not orthogonal: max |P^T P - I| = {error:e}")]
    NotOrthogonal { error: f64 },

    #[error("matrix is outside SO*(n): {0}")]
    NotInSoStar(String),

    #[error("singular linear system ({context}), pivot ratio {pivot_ratio:e}")]
    SingularSolve {
        context: &'static str,
        pivot_ratio: f64,
    },

    #[error("matrix is not symmetric positive-definite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LcvError>;
