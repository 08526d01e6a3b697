use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument {
        op,
        msg: msg.into(),
    }
}
