use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("rank {rank} exceeds extent {extent} on mode {mode}")]
    RankExceedsExtent { mode: usize, rank: usize, extent: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular normal equations in {step} update")]
    SingularSystem { step: &'static str },

    #[error("zero regressor in {step} update: all inputs vanish")]
    ZeroRegressor { step: &'static str },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("singular jacobian at frame {frame}")]
    SingularJacobian { frame: usize },

    #[error("arm leaves the image at frame {frame}")]
    ArmOutOfFrame { frame: usize },

    #[error("model is not fitted: {0}")]
    Unfitted(String),

    #[error("unknown cycle `{0}`")]
    UnknownCycle(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::Shape(_)
            | Error::ModeOutOfRange { .. }
            | Error::RankExceedsExtent { .. }
            | Error::Unfitted(_)
            | Error::UnknownCycle(_)
            | Error::Format(_)
            | Error::ArmOutOfFrame { .. }
            | Error::Io { .. } => ErrorClass::Data,
            Error::SingularSystem { .. }
            | Error::ZeroRegressor { .. }
            | Error::NotPositiveDefinite(_)
            | Error::NonConvergence(_)
            | Error::SingularJacobian { .. } => ErrorClass::Numerical,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
