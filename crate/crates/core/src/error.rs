use thiserror::Error;

/// Errors produced by the numeric, model and imaging layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("matrix is rank deficient at column {column}")]
    RankDeficient { column: usize },
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("matrix is not on the Stiefel manifold (orthogonality error {error:e})")]
    NotOnManifold { error: f64 },
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("loss increased by {increase:e} at iteration {iter}")]
    DescentViolation { iter: usize, increase: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported method: {0}")]
    UnsupportedMethod(String),
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the data itself rather than by I/O or usage.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateData(_)
                | Error::RankDeficient { .. }
                | Error::NotPsd { .. }
                | Error::NumericFailure(_)
                | Error::DescentViolation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
