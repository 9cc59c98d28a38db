//! Central-difference gradient checking.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Central-difference gradient of a plain scalar function.
pub fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    out
}

fn scalar_of(tape: &Tape, y: Var) -> Result<f64> {
    let v = tape.value(y);
    if !v.is_scalar() {
        return Err(TensorError::Contract(format!(
            "gradient check needs a scalar-valued function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Maximum relative error between the tape gradient of `f` at `x` and its
/// central-difference estimate, over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = (0..x.len()).map(|i| (0, i)).collect();
    grad_check_coords(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        &coords,
        eps,
    )
}

/// Like [`grad_check`] for several inputs, restricted to the listed
/// `(input index, flat element index)` coordinates.
pub fn grad_check_coords<F>(
    f: F,
    inputs: &[Tensor],
    coords: &[(usize, usize)],
    eps: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(TensorError::Argument(format!("eps must be > 0, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let y = f(&mut tape, &vars)?;
    scalar_of(&tape, y)?;
    let grads = tape.backward(y)?;

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = probe.iter().map(|p| t.constant(p.clone())).collect();
        let y = f(&mut t, &vs)?;
        scalar_of(&t, y)
    };

    let mut probe = inputs.to_vec();
    let mut worst = 0.0_f64;
    for &(which, idx) in coords {
        let base = probe
            .get(which)
            .and_then(|t| t.data().get(idx).copied())
            .ok_or_else(|| TensorError::Argument(format!("no coordinate ({which}, {idx})")))?;
        probe[which].data_mut()[idx] = base + eps;
        let plus = eval(&probe)?;
        probe[which].data_mut()[idx] = base - eps;
        let minus = eval(&probe)?;
        probe[which].data_mut()[idx] = base;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.get(vars[which]).map_or(0.0, |g| g.data()[idx]);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}
