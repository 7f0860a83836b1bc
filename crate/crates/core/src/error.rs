use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A requested time, scale or sample budget falls outside the range where
    /// the grid discretization is trustworthy.
    #[error("numerically inadmissible: {0}")]
    Inadmissible(String),

    #[error("invalid configuration at {path}: {message}")]
    Config { path: String, message: String },

    /// An internal consistency check failed (mass balance, tree structure...).
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("rejection sampler acceptance rate {rate:.3e} below 1e-6")]
    RejectionCollapse { rate: f64 },

    #[error("field format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn inadmissible(msg: impl Into<String>) -> Self {
        Error::Inadmissible(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::InvalidParameter(_)
            | Error::DimensionMismatch { .. }
            | Error::Format(_)
            | Error::Json(_)
            | Error::Io(_) => 1,
            Error::Inadmissible(_) | Error::RejectionCollapse { .. } => 2,
            Error::Invariant(_) => 3,
        }
    }
}
