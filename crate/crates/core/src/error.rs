use std::path::PathBuf;

/// Errors produced by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("timestep {t} out of range (num_train_steps = {num_train_steps})")]
    TimestepOutOfRange { t: usize, num_train_steps: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("no facial region detected in {source_id}")]
    NoFaceDetected { source_id: String },

    #[error("demakeup adapter unavailable: {0}")]
    DemakeupUnavailable(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unsupported container version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("failed to read image {path}: {message}")]
    ImageRead { path: PathBuf, message: String },

    #[error("failed to write image {path}: {message}")]
    ImageWrite { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl std::fmt::Debug,
    actual: impl std::fmt::Debug,
) -> Error {
    Error::ShapeMismatch {
        context,
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
    }
}
