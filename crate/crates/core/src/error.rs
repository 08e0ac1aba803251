use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{op}: backward called without a saved forward context")]
    MissingContext { op: &'static str },

    #[error("batch norm: running statistics are not initialized")]
    UninitializedStats,

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("model file: bad magic {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("model file: unsupported format version {found} (this build reads {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model file: truncated tensor data: {0}")]
    TruncatedTensorData(String),

    #[error("model file: malformed header: {0}")]
    MalformedHeader(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },

    #[error("invalid training configuration: {0}")]
    TrainConfig(String),

    #[error("manifest not found: {0}")]
    ManifestMissing(PathBuf),

    #[error("manifest schema violation: {0}")]
    ManifestSchema(String),

    #[error("manifest references a missing image: {0}")]
    DanglingImage(PathBuf),

    #[error("classes with fewer than 2 samples cannot be split: {0:?}")]
    ClassTooSmall(Vec<String>),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}
