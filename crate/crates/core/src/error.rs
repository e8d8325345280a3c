use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value in {op} at index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("partition error: {frames} frames cannot be split into blocks of {block_size}")]
    Partition { frames: usize, block_size: usize },
    #[error("perturbation error: {0}")]
    Perturbation(String),
    #[error("record error: {0}")]
    Record(String),
    #[error("shape error: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("score undefined: {0}")]
    UndefinedScore(String),
    #[error("missing prerequisite {what}: {path}")]
    Dependency { what: String, path: PathBuf },
    #[error("tensor file error: {0}")]
    TensorFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}
