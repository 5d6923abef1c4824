use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServoError {
    #[error("feature point {index} has non-positive depth {depth:.6} m in the camera frame")]
    NonPositiveDepth { index: usize, depth: f64 },

    #[error("unknown target model `{0}` (expected apriltag, charging_port or toy_horse)")]
    UnknownModel(String),

    #[error("invalid target model: {0}")]
    InvalidModel(String),

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("interaction matrix is numerically singular (condition estimate {0:.3e})")]
    SingularInteraction(f64),

    #[error("pose sampling exhausted after {0} rejections")]
    SamplingExhausted(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("controller `{0}` cannot be trained")]
    NotTrainable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = ServoError> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(ServoError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
