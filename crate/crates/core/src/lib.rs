//! Prompted binary segmentation with a frozen vision transformer adapted
//! through low-rank bypasses, a prompt encoder and a small mask decoder.
//!
//! Everything runs on the tape-based autodiff in `lseg-autograd` in `f64`.

pub mod check;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod grid;
pub mod loss;
pub mod lora;
pub mod metrics;
pub mod model;
pub mod params;
pub mod prompt;
pub mod protocols;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use grid::{Grid, Image, Mask};
pub use model::{Model, Predictor};
