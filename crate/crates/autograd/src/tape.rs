//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs. Because a node can only reference nodes created before it,
//! the node vector is already in topological order and `backward` is a
//! single reverse sweep.

use crate::error::{Result, TensorError};
use crate::tensor::{gemm, Operand, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `mul * x + add`
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    /// matrix `[r × c]` plus a length-`r` vector broadcast over columns
    AddColumn(Var, Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Log(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    AvgPool1d(Var),
    ExpandWindows(Var),
    Reshape(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations; one tape per forward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every `requires_grad` leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Moves a gradient out, leaving `None` behind.
    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Window `[start, end)` of adaptive 1-d pooling from `n` inputs to `p` outputs.
pub fn pool_window(i: usize, n: usize, p: usize) -> (usize, usize) {
    (i * n / p, (i + 1) * n / p)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records an input tensor that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.value(a).zip_map(self.value(b), name, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), self.rg(&[a, b])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), self.rg(&[a, b])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), self.rg(&[a, b])))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b), self.rg(&[a, b])))
    }

    /// `mul * x + add`, elementwise.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let v = self.value(x).map(|e| mul * e + add);
        self.push(v, Op::Affine(x, mul), self.rg(&[x]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), self.rg(&[a, b])))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).transpose()?;
        Ok(self.push(v, Op::Transpose(x), self.rg(&[x])))
    }

    /// Adds a length-`r` vector to every column of an `r × c` matrix.
    pub fn add_column(&mut self, m: Var, col: Var) -> Result<Var> {
        let mv = self.value(m);
        let (r, c) = mv.dims2()?;
        let cv = self.value(col);
        if cv.len() != r {
            return Err(TensorError::shape("add_column", mv.shape(), cv.shape()));
        }
        let mut out = mv.clone();
        for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
            let b = cv.data()[i];
            row.iter_mut().for_each(|e| *e += b);
        }
        Ok(self.push(out, Op::AddColumn(m, col), self.rg(&[m, col])))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis, "softmax")?;
        let mut out = xv.clone();
        let d = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| d[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (d[idx(k)] - max).exp();
                    d[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    d[idx(k)] /= total;
                }
            }
        }
        Ok(self.push(out, Op::Softmax(x, axis), self.rg(&[x])))
    }

    /// Normalizes over the last axis, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(TensorError::Argument(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let xv = self.value(x);
        let width = *xv.shape().last().expect("non-empty shape");
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != width || b.len() != width {
            return Err(TensorError::shape("layer_norm", xv.shape(), g.shape()));
        }
        let rows = xv.len() / width;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let seg = &xv.data()[r * width..(r + 1) * width];
            let mean = seg.iter().sum::<f64>() / width as f64;
            let var = seg.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / width as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..width {
                let h = (seg[j] - mean) * rs;
                xhat[r * width + j] = h;
                out[r * width + j] = g.data()[j] * h + b.data()[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self
            .value(x)
            .map(|e| 0.5 * e * (1.0 + (GELU_C * (e + GELU_K * e * e * e)).tanh()));
        self.push(v, Op::Gelu(x), self.rg(&[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x), self.rg(&[x]))
    }

    /// Natural log with inputs floored at the smallest positive normal `f64`.
    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.max(f64::MIN_POSITIVE).ln());
        self.push(v, Op::Log(x), self.rg(&[x]))
    }

    pub fn powf(&mut self, x: Var, exponent: f64) -> Var {
        let v = self.value(x).map(|e| e.powf(exponent));
        self.push(v, Op::Powf(x, exponent), self.rg(&[x]))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|e| e.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi), self.rg(&[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), self.rg(&[x]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push(v, Op::Mean(x), self.rg(&[x]))
    }

    /// Adaptive average pooling of a 1-d tensor `[n]` down to `[p]`.
    pub fn avg_pool_1d(&mut self, x: Var, p: usize) -> Result<Var> {
        let xv = self.value(x);
        let v = avg_pool_1d(xv, p)?;
        Ok(self.push(v, Op::AvgPool1d(x), self.rg(&[x])))
    }

    /// Replicates each entry of a 1-d tensor `[p]` across its pooling window
    /// in `[n]`. Adjoint of [`Tape::avg_pool_1d`] up to per-window scaling.
    pub fn expand_windows(&mut self, x: Var, n: usize) -> Result<Var> {
        let v = expand_windows(self.value(x), n)?;
        Ok(self.push(v, Op::ExpandWindows(x), self.rg(&[x])))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), self.rg(&[x])))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if start >= end || end > r {
            return Err(TensorError::Argument(format!(
                "row slice {start}..{end} out of range for {r} rows"
            )));
        }
        let v = Tensor::new(vec![end - start, c], xv.data()[start * c..end * c].to_vec())?;
        Ok(self.push(v, Op::SliceRows(x, start), self.rg(&[x])))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if start >= end || end > c {
            return Err(TensorError::Argument(format!(
                "column slice {start}..{end} out of range for {c} columns"
            )));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&xv.data()[i * c + start..i * c + end]);
        }
        let v = Tensor::new(vec![r, w], out)?;
        Ok(self.push(v, Op::SliceCols(x, start), self.rg(&[x])))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Argument("concat of zero tensors".into()))?;
        let (_, c) = self.value(*first).dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            let (pr, pc) = pv.dims2()?;
            if pc != c {
                return Err(TensorError::shape("concat_rows", self.value(*first).shape(), pv.shape()));
            }
            rows += pr;
            out.extend_from_slice(pv.data());
        }
        let v = Tensor::new(vec![rows, c], out)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), self.rg(parts)))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Argument("concat of zero tensors".into()))?;
        let (r, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            let (pr, pc) = pv.dims2()?;
            if pr != r {
                return Err(TensorError::shape("concat_cols", self.value(*first).shape(), pv.shape()));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let v = Tensor::new(vec![r, total], out)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), self.rg(parts)))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every leaf recorded with `requires_grad` gets a gradient, zero-filled
    /// if the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
        }

        let mut out = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                out[i] = Some(
                    grads
                        .get_mut(i)
                        .and_then(|g| g.take())
                        .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec())),
                );
            }
        }
        Ok(Gradients { grads: out })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), "mul", |g, y| g * y)?)?;
                acc(*b, g.zip_map(val(*a), "mul", |g, x| g * x)?)?;
            }
            Op::Div(a, b) => {
                acc(*a, g.zip_map(val(*b), "div", |g, y| g / y)?)?;
                let ratio = node.value.zip_map(val(*b), "div", |q, y| q / y)?;
                acc(*b, g.zip_map(&ratio, "div", |g, r| -g * r)?)?;
            }
            Op::Affine(x, mul) => acc(*x, g.scale(*mul))?,
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2()?;
                let (_, n) = val(*b).dims2()?;
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        Operand::plain(g.data(), m, n),
                        Operand::t(val(*b).data(), k, n),
                        &mut da,
                        false,
                    );
                    acc(*a, Tensor::new(vec![m, k], da)?)?;
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    gemm(
                        Operand::t(val(*a).data(), m, k),
                        Operand::plain(g.data(), m, n),
                        &mut db,
                        false,
                    );
                    acc(*b, Tensor::new(vec![k, n], db)?)?;
                }
            }
            Op::Transpose(x) => acc(*x, g.transpose()?)?,
            Op::AddColumn(m, col) => {
                acc(*m, g.clone())?;
                let (_, c) = g.dims2()?;
                let sums: Vec<f64> = g.data().chunks(c).map(|r| r.iter().sum()).collect();
                acc(*col, Tensor::new(val(*col).shape().to_vec(), sums)?)?;
            }
            Op::Softmax(x, axis) => {
                let y = &node.value;
                let (outer, len, inner) = axis_split(y.shape(), *axis, "softmax")?;
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g.data()[idx(k)] * y.data()[idx(k)]).sum();
                        for k in 0..len {
                            dx[idx(k)] = y.data()[idx(k)] * (g.data()[idx(k)] - dot);
                        }
                    }
                }
                acc(*x, Tensor::new(y.shape().to_vec(), dx)?)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = val(*gamma).data();
                let width = gv.len();
                let mut dx = vec![0.0; xhat.len()];
                let mut dgamma = vec![0.0; width];
                let mut dbeta = vec![0.0; width];
                for (r, rs) in rstd.iter().enumerate() {
                    let span = r * width..(r + 1) * width;
                    let gy = &g.data()[span.clone()];
                    let xh = &xhat[span.clone()];
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..width {
                        let d = gy[j] * gv[j];
                        mean_d += d;
                        mean_dx += d * xh[j];
                        dgamma[j] += gy[j] * xh[j];
                        dbeta[j] += gy[j];
                    }
                    mean_d /= width as f64;
                    mean_dx /= width as f64;
                    for j in 0..width {
                        let d = gy[j] * gv[j];
                        dx[r * width + j] = rs * (d - mean_d - xh[j] * mean_dx);
                    }
                }
                acc(*x, Tensor::new(val(*x).shape().to_vec(), dx)?)?;
                acc(*gamma, Tensor::new(val(*gamma).shape().to_vec(), dgamma)?)?;
                acc(*beta, Tensor::new(val(*beta).shape().to_vec(), dbeta)?)?;
            }
            Op::Gelu(x) => {
                let d = g.zip_map(val(*x), "gelu", |g, e| {
                    let t = (GELU_C * (e + GELU_K * e * e * e)).tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_K * e * e);
                    g * (0.5 * (1.0 + t) + 0.5 * e * (1.0 - t * t) * du)
                })?;
                acc(*x, d)?;
            }
            Op::Sigmoid(x) => acc(*x, g.zip_map(&node.value, "sigmoid", |g, y| g * y * (1.0 - y))?)?,
            Op::Log(x) => {
                acc(*x, g.zip_map(val(*x), "log", |g, e| g / e.max(f64::MIN_POSITIVE))?)?;
            }
            Op::Powf(x, p) => {
                let p = *p;
                acc(*x, g.zip_map(val(*x), "powf", |g, e| g * p * e.powf(p - 1.0))?)?;
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = g.zip_map(val(*x), "clamp", |g, e| if e < lo || e > hi { 0.0 } else { g })?;
                acc(*x, d)?;
            }
            Op::Sum(x) => {
                let s = g.item()?;
                acc(*x, Tensor::full(val(*x).shape().to_vec(), s))?;
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let s = g.item()? / xv.len() as f64;
                acc(*x, Tensor::full(xv.shape().to_vec(), s))?;
            }
            Op::AvgPool1d(x) => {
                let n = val(*x).len();
                let p = node.value.len();
                let mut dx = vec![0.0; n];
                for i in 0..p {
                    let (s, e) = pool_window(i, n, p);
                    let share = g.data()[i] / (e - s) as f64;
                    dx[s..e].iter_mut().for_each(|v| *v = share);
                }
                acc(*x, Tensor::new(val(*x).shape().to_vec(), dx)?)?;
            }
            Op::ExpandWindows(x) => {
                let p = val(*x).len();
                let n = node.value.len();
                let dx: Vec<f64> = (0..p)
                    .map(|i| {
                        let (s, e) = pool_window(i, n, p);
                        g.data()[s..e].iter().sum()
                    })
                    .collect();
                acc(*x, Tensor::new(val(*x).shape().to_vec(), dx)?)?;
            }
            Op::Reshape(x) => acc(*x, g.reshape(val(*x).shape().to_vec())?)?,
            Op::SliceRows(x, start) => {
                let xv = val(*x);
                let (_, c) = xv.dims2()?;
                let mut dx = Tensor::zeros(xv.shape().to_vec());
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*x, dx)?;
            }
            Op::SliceCols(x, start) => {
                let xv = val(*x);
                let (r, c) = xv.dims2()?;
                let (_, w) = g.dims2()?;
                let mut dx = Tensor::zeros(xv.shape().to_vec());
                for i in 0..r {
                    dx.data_mut()[i * c + start..i * c + start + w]
                        .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                acc(*x, dx)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    acc(p, Tensor::new(pv.shape().to_vec(), g.data()[offset..offset + pv.len()].to_vec())?)?;
                    offset += pv.len();
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = val(p).dims2()?;
                    let mut d = Vec::with_capacity(r * w);
                    for i in 0..r {
                        d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                    }
                    acc(p, Tensor::new(vec![r, w], d)?)?;
                    offset += w;
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adaptive average pooling of a 1-d tensor of length `n` to length `p`.
pub fn avg_pool_1d(x: &Tensor, p: usize) -> Result<Tensor> {
    if x.rank() != 1 {
        return Err(TensorError::Dimension(format!(
            "avg_pool_1d expects a 1-d tensor, got {:?}",
            x.shape()
        )));
    }
    let n = x.len();
    if p == 0 || p > n {
        return Err(TensorError::Argument(format!(
            "pooled length {p} must be in 1..={n}"
        )));
    }
    let data = (0..p)
        .map(|i| {
            let (s, e) = pool_window(i, n, p);
            x.data()[s..e].iter().sum::<f64>() / (e - s) as f64
        })
        .collect();
    Tensor::new(vec![p], data)
}

/// Window replication from `[p]` to `[n]`.
pub fn expand_windows(x: &Tensor, n: usize) -> Result<Tensor> {
    let p = x.len();
    if x.rank() != 1 || p == 0 || p > n {
        return Err(TensorError::Argument(format!(
            "cannot expand shape {:?} to length {n}",
            x.shape()
        )));
    }
    let mut out = vec![0.0; n];
    for i in 0..p {
        let (s, e) = pool_window(i, n, p);
        out[s..e].iter_mut().for_each(|v| *v = x.data()[i]);
    }
    Tensor::new(vec![n], out)
}

fn axis_split(shape: &[usize], axis: usize, op: &str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Dimension(format!(
            "{op}: axis {axis} invalid for shape {shape:?}"
        )));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}
