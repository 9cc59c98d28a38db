//! Small dense-tensor core with reverse-mode automatic differentiation.
//!
//! Values are row-major `f64` arrays ([`Tensor`]). A forward pass records
//! operations on a [`Tape`]; [`Tape::backward`] walks it once in reverse.
//! [`grad_check`] compares analytic gradients against central differences.

mod error;
mod gradcheck;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_coords, numeric_grad, relative_error, DEFAULT_EPS};
pub use tape::{avg_pool_1d, expand_windows, pool_window, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
