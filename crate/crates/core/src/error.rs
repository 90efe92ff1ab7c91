use thiserror::Error;

/// Errors raised by geometry, distance, probability and model operations.
#[derive(Debug, Error)]
pub enum GsmError {
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("linear system is singular to working precision")]
    SingularSystem,

    #[error("Cholesky factorization failed: matrix is not positive definite")]
    CholeskyFailure,

    #[error("eigenvalue iteration did not converge")]
    EigenFailure,

    #[error("surface model has no components")]
    EmptyModel,

    #[error("invalid neighbour count K = {0}")]
    InvalidK(usize),

    #[error("gradient is undefined for colliding or touching configurations")]
    UndefinedGradient,

    #[error("too few points: need at least {needed}, got {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("all mixture components degenerated during fitting")]
    DegenerateComponent,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid shapes differ: {0}")]
    ShapeMismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GsmError> = std::result::Result<T, E>;

impl GsmError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        GsmError::Parse {
            line,
            message: message.into(),
        }
    }
}
