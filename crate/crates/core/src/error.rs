use keynav_autodiff::AutodiffError;
use keynav_simenv::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite loss at step {step} (scene seed {scene_seed}, parameter checksum {checksum:016x}); {detail}")]
    Diverged {
        step: usize,
        scene_seed: u64,
        checksum: u64,
        detail: String,
    },
    #[error("{0} is inside an obstacle")]
    Occupied(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn config(msg: impl Into<String>) -> CoreError {
    CoreError::Config(msg.into())
}
