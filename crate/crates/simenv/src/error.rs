use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("degenerate scene parameters: {0}")]
    DegenerateParams(String),
    #[error("non-finite query point {0:?}")]
    NonFinite([f64; 3]),
    #[error("camera at {0:?} is inside an occupied voxel")]
    CameraInObstacle([f64; 3]),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("no valid goal cell found after {0} draws")]
    NoValidGoal(usize),
    #[error("scene file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
