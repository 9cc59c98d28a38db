use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl TensorError {
    pub fn shape(op: &str, lhs: &[usize], rhs: &[usize]) -> Self {
        TensorError::Dimension(format!("{op}: incompatible shapes {lhs:?} and {rhs:?}"))
    }
}
