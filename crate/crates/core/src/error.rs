use thiserror::Error;

/// Crate-wide error type. Numerical failures carry enough context to tell a
/// bad input (rejected up front) from a breakdown inside a factorization.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mesh construction failed: {0}")]
    Mesh(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("measurement functional {index} is linearly dependent on the previous ones")]
    DependentFunctional { index: usize },

    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("persisted artifact is malformed: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code per the CLI contract: 2 for bad input or config,
    /// 3 for a numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Mesh(_)
            | Error::Dimension(_)
            | Error::Config(_)
            | Error::Artifact(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::DependentFunctional { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::Numerical(_) => 3,
        }
    }
}
