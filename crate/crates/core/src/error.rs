use thiserror::Error;

use crate::diffarray::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op}: expected {expected} channels, got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },
    #[error("backward called on a tape that was already consumed")]
    TapeConsumed,
    #[error("backward needs a (1,1,1,1) loss, got {0}")]
    NotScalar(Shape),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("target mask is not binary")]
    NonBinaryTarget,
    #[error("batch norm `{0}` evaluated before any running statistics exist")]
    BatchNormUninitialized(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint tensor `{name}` does not match the model: {detail}")]
    ManifestMismatch { name: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
