use thiserror::Error;

/// Crate-wide error type. Validation failures (bad shapes, bad annotations,
/// malformed files) are distinguished from runtime failures (diverged
/// training, undefined metrics, infeasible deployments) so callers can map
/// them onto different exit paths.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("annotation line {line}: {reason}")]
    Annotation { line: usize, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("image {path}: {reason}")]
    Image { path: String, reason: String },

    #[error("training diverged at step {step}: loss is not finite")]
    NonFiniteLoss { step: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("deployment infeasible: {0}")]
    Infeasible(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("camera: {0}")]
    Camera(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than by the computation
    /// itself. The command-line layer maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::InvalidArgument(_)
                | Error::Annotation { .. }
                | Error::Dataset(_)
                | Error::Image { .. }
                | Error::ModelFormat(_)
                | Error::Camera(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
