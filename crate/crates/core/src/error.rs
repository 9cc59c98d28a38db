use std::path::PathBuf;

use lseg_autograd::TensorError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("mask has no foreground pixels")]
    EmptyForeground,
    #[error("no entry for {0}")]
    Lookup(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("PGM parse error at byte {offset}: {msg}")]
    Pgm { offset: usize, msg: String },
    #[error("checkpoint manifest error: {0}")]
    Manifest(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("gradient check failed: max relative error {0:.3e}")]
    GradCheck(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
