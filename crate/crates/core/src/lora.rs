//! Low-rank adapters on frozen linear layers and the pooled ("loose")
//! adapter embedding.
//!
//! An adapted layer computes `W·F + B·(A·F)`, so the effective weight is
//! `W + B·A` while `W` itself never changes. With the loose embedding,
//! every `A` and `B` factor of the encoder is average-pooled to a common
//! length `p` and the pooled rows are stacked into one trainable matrix
//! `M`. At forward time each factor is rebuilt from its row of `M` by
//! replicating every pooled value across its pooling window.

use std::fmt;

use lseg_autograd::{avg_pool_1d, expand_windows, Tape, Tensor, Var};

use crate::decoder;
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::prompt;
use crate::rng::Rng;

/// A frozen linear layer with a trainable rank-`r` bypass.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLinear {
    /// `[d_out × d_in]`, frozen
    pub weight: Tensor,
    /// `[d_out]`, frozen
    pub bias: Option<Tensor>,
    /// `[r × d_in]`
    pub a: Tensor,
    /// `[d_out × r]`
    pub b: Tensor,
}

impl LoraLinear {
    /// Wraps a frozen layer with `A ~ N(0, 1/d_in)` and `B = 0`.
    pub fn new(weight: Tensor, bias: Option<Tensor>, rank: usize, rng: &mut Rng) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Argument("LoRA rank must be positive".into()));
        }
        let (d_out, d_in) = weight.dims2()?;
        let std = 1.0 / (d_in as f64).sqrt();
        let a = Tensor::from_fn(vec![rank, d_in], |_| rng.normal() * std);
        let b = Tensor::zeros(vec![d_out, rank]);
        Self::from_parts(weight, bias, a, b)
    }

    pub fn from_parts(weight: Tensor, bias: Option<Tensor>, a: Tensor, b: Tensor) -> Result<Self> {
        let (d_out, d_in) = weight.dims2()?;
        let (r, a_in) = a.dims2()?;
        let (b_out, r2) = b.dims2()?;
        if a_in != d_in || b_out != d_out || r != r2 {
            return Err(Error::Argument(format!(
                "factor shapes A {:?}, B {:?} do not fit weight {:?}",
                a.shape(),
                b.shape(),
                weight.shape()
            )));
        }
        if r > d_in.min(d_out) {
            return Err(Error::Argument(format!(
                "rank {r} exceeds min(d_in, d_out) = {}",
                d_in.min(d_out)
            )));
        }
        if let Some(bias) = &bias {
            if bias.len() != d_out {
                return Err(Error::Argument(format!(
                    "bias length {} does not match d_out {d_out}",
                    bias.len()
                )));
            }
        }
        Ok(Self { weight, bias, a, b })
    }

    pub fn rank(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Dense `W + B·A`; `self` is left untouched.
    pub fn merge(&self) -> Tensor {
        let delta = self.b.matmul(&self.a).expect("factor shapes checked at construction");
        self.weight.add(&delta).expect("same shape")
    }

    /// Records the layer on `tape` (`W`, bias frozen; `A`, `B` tracked) and
    /// applies it to `f`.
    pub fn forward(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        let vars = LoraVars {
            weight: tape.constant(self.weight.clone()),
            bias: self.bias.as_ref().map(|b| tape.constant(b.clone())),
            a: tape.leaf(self.a.clone(), true),
            b: tape.leaf(self.b.clone(), true),
        };
        lora_forward(tape, &vars, f)
    }
}

/// Tape handles of an adapted layer.
#[derive(Debug, Clone, Copy)]
pub struct LoraVars {
    pub weight: Var,
    pub bias: Option<Var>,
    pub a: Var,
    pub b: Var,
}

/// `W·F + B·(A·F)` plus bias broadcast over tokens. `F` is `[d_in × n]`.
///
/// The low-rank path is two thin products; `W + B·A` is never formed.
pub fn lora_forward(tape: &mut Tape, layer: &LoraVars, f: Var) -> Result<Var> {
    let base = tape.matmul(layer.weight, f)?;
    let down = tape.matmul(layer.a, f)?;
    let up = tape.matmul(layer.b, down)?;
    let out = tape.add(base, up)?;
    match layer.bias {
        Some(b) => Ok(tape.add_column(out, b)?),
        None => Ok(out),
    }
}

/// Plain linear layer `W·F + bias`.
pub fn linear_forward(tape: &mut Tape, weight: Var, bias: Option<Var>, f: Var) -> Result<Var> {
    let out = tape.matmul(weight, f)?;
    match bias {
        Some(b) => Ok(tape.add_column(out, b)?),
        None => Ok(out),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorRole {
    A,
    B,
}

impl fmt::Display for FactorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FactorRole::A => "A",
            FactorRole::B => "B",
        })
    }
}

impl std::str::FromStr for FactorRole {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(FactorRole::A),
            "B" => Ok(FactorRole::B),
            _ => Err(Error::Argument(format!("unknown factor role {s:?}"))),
        }
    }
}

/// Which factor a row of the loose matrix stands for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorDescriptor {
    /// adapted projection, e.g. `block0/q`
    pub layer: String,
    pub role: FactorRole,
    /// original `[rows, cols]` of the factor
    pub shape: [usize; 2],
}

impl FactorDescriptor {
    pub fn flat_len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }
}

/// Stacked pooled factors: one row of length `p` per `A`/`B` factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LooseLoraEmbedding {
    /// `[L × p]`
    pub matrix: Tensor,
    pub descriptors: Vec<FactorDescriptor>,
}

impl LooseLoraEmbedding {
    pub fn pooled_len(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn num_rows(&self) -> usize {
        self.descriptors.len()
    }

    pub fn row_of(&self, layer: &str, role: FactorRole) -> Result<usize> {
        row_of(&self.descriptors, layer, role)
    }

    /// Factor rebuilt from its row by window replication.
    pub fn expand(&self, layer: &str, role: FactorRole) -> Result<Tensor> {
        let row = self.row_of(layer, role)?;
        let d = &self.descriptors[row];
        let p = self.pooled_len();
        let pooled = Tensor::new(vec![p], self.matrix.data()[row * p..(row + 1) * p].to_vec())?;
        Ok(expand_windows(&pooled, d.flat_len())?.reshape(d.shape.to_vec())?)
    }
}

pub fn row_of(descriptors: &[FactorDescriptor], layer: &str, role: FactorRole) -> Result<usize> {
    descriptors
        .iter()
        .position(|d| d.layer == layer && d.role == role)
        .ok_or_else(|| Error::Lookup(format!("loose factor {layer}/{role}")))
}

/// Pools each `A` and `B` (row-major flattened) to length `p` and stacks
/// the results, `A` before `B` for each adapter, adapters in order.
pub fn build_loose_embedding(adapters: &[(String, &LoraLinear)], p: usize) -> Result<LooseLoraEmbedding> {
    if adapters.is_empty() {
        return Err(Error::Argument("no adapters to pool".into()));
    }
    let smallest = adapters
        .iter()
        .flat_map(|(_, l)| [l.a.len(), l.b.len()])
        .min()
        .unwrap_or(0);
    if p == 0 || p > smallest {
        return Err(Error::Argument(format!(
            "pooled length {p} must be in 1..={smallest} (smallest factor size)"
        )));
    }
    let mut rows = Vec::with_capacity(adapters.len() * 2 * p);
    let mut descriptors = Vec::with_capacity(adapters.len() * 2);
    for (name, layer) in adapters {
        for (role, factor) in [(FactorRole::A, &layer.a), (FactorRole::B, &layer.b)] {
            let flat = factor.reshape(vec![factor.len()])?;
            rows.extend_from_slice(avg_pool_1d(&flat, p)?.data());
            let (r, c) = factor.dims2()?;
            descriptors.push(FactorDescriptor {
                layer: name.clone(),
                role,
                shape: [r, c],
            });
        }
    }
    let matrix = Tensor::new(vec![descriptors.len(), p], rows)?;
    Ok(LooseLoraEmbedding { matrix, descriptors })
}

/// Tape version of [`LooseLoraEmbedding::expand`]: gradients flow from the
/// rebuilt factor back into the loose matrix `m`.
pub fn expand_loose(
    tape: &mut Tape,
    m: Var,
    descriptors: &[FactorDescriptor],
    layer: &str,
    role: FactorRole,
) -> Result<Var> {
    let row = row_of(descriptors, layer, role)?;
    let d = &descriptors[row];
    let p = tape.value(m).shape()[1];
    let r = tape.slice_rows(m, row, row + 1)?;
    let r = tape.reshape(r, vec![p])?;
    let full = tape.expand_windows(r, d.flat_len())?;
    Ok(tape.reshape(full, d.shape.to_vec())?)
}

/// Closed-form parameter counts for a model built from `cfg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBudget {
    pub trainable_count: usize,
    pub frozen_count: usize,
    pub trainable_fraction: f64,
    /// trainable scalars in the encoder bypass (adapters or loose matrix)
    pub bypass_trainable: usize,
    /// frozen scalars of the image encoder
    pub encoder_frozen: usize,
    pub prompt_trainable: usize,
    pub prompt_frozen: usize,
    pub decoder_trainable: usize,
}

impl ParamBudget {
    /// Bypass share of encoder plus adapters.
    pub fn encoder_fraction(&self) -> f64 {
        self.bypass_trainable as f64 / (self.bypass_trainable + self.encoder_frozen) as f64
    }
}

/// Trainable scalars added by one adapter: `r·(d_in + d_out)`.
pub fn adapter_param_count(d_in: usize, d_out: usize, rank: usize) -> usize {
    rank * (d_in + d_out)
}

pub fn param_budget(cfg: &EncoderConfig) -> ParamBudget {
    let d = cfg.embed_dim;
    let adapted = encoder::ADAPTED_PROJECTIONS.len() * cfg.num_blocks;
    let bypass_trainable = if cfg.use_loose_embedding {
        2 * adapted * cfg.pooled_len
    } else {
        adapted * adapter_param_count(d, d, cfg.lora_rank)
    };
    let encoder_frozen = encoder::frozen_param_count(cfg);
    let (prompt_trainable, prompt_frozen) = prompt::param_counts(d);
    let decoder_trainable = decoder::param_count(d);
    let trainable_count = bypass_trainable + prompt_trainable + decoder_trainable;
    let frozen_count = encoder_frozen + prompt_frozen;
    ParamBudget {
        trainable_count,
        frozen_count,
        trainable_fraction: trainable_count as f64 / (trainable_count + frozen_count) as f64,
        bypass_trainable,
        encoder_frozen,
        prompt_trainable,
        prompt_frozen,
        decoder_trainable,
    }
}
