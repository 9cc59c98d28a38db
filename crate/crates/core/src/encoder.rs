//! Frozen ViT image encoder with low-rank bypasses on the query and value
//! projections of every block.
//!
//! Activations are laid out `[d × n_tokens]`: one column per token.
//! Each block is pre-norm:
//! `x + Attn(LN(x))` followed by `x + MLP(LN(x))`.

use lseg_autograd::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::lora::{
    build_loose_embedding, expand_loose, linear_forward, lora_forward, FactorDescriptor, FactorRole,
    LoraLinear, LoraVars,
};
use crate::params::{Binding, ParamStore};
use crate::rng::Rng;

/// Projections that carry an adapter; `k` and `o` stay plain.
pub const ADAPTED_PROJECTIONS: [&str; 2] = ["q", "v"];
pub const LN_EPS: f64 = 1e-5;
const FROZEN_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub lora_rank: usize,
    pub use_loose_embedding: bool,
    /// row length `p` of the loose matrix
    pub pooled_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            embed_dim: 64,
            num_blocks: 4,
            num_heads: 2,
            mlp_ratio: 4,
            lora_rank: 4,
            use_loose_embedding: true,
            pooled_len: 64,
        }
    }
}

impl EncoderConfig {
    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.num_heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if !self.embed_dim.is_multiple_of(2) {
            return bad(format!("embed_dim {} must be even", self.embed_dim));
        }
        if self.num_blocks == 0 || self.mlp_ratio == 0 {
            return bad("num_blocks and mlp_ratio must be positive".into());
        }
        if self.lora_rank == 0 || self.lora_rank > self.embed_dim {
            return bad(format!(
                "lora_rank {} must be in 1..={}",
                self.lora_rank, self.embed_dim
            ));
        }
        if self.use_loose_embedding
            && (self.pooled_len == 0 || self.pooled_len > self.lora_rank * self.embed_dim)
        {
            return bad(format!(
                "pooled_len {} must be in 1..={} (smallest factor size)",
                self.pooled_len,
                self.lora_rank * self.embed_dim
            ));
        }
        Ok(())
    }
}

/// Row layout of the loose matrix: for every block, `q` then `v`, each
/// contributing its `A` row then its `B` row.
pub fn loose_descriptors(cfg: &EncoderConfig) -> Vec<FactorDescriptor> {
    let (d, r) = (cfg.embed_dim, cfg.lora_rank);
    let mut out = Vec::new();
    for i in 0..cfg.num_blocks {
        for proj in ADAPTED_PROJECTIONS {
            let layer = format!("block{i}/{proj}");
            out.push(FactorDescriptor {
                layer: layer.clone(),
                role: FactorRole::A,
                shape: [r, d],
            });
            out.push(FactorDescriptor {
                layer,
                role: FactorRole::B,
                shape: [d, r],
            });
        }
    }
    out
}

/// Count of frozen encoder scalars, from the layer shapes.
pub fn frozen_param_count(cfg: &EncoderConfig) -> usize {
    let d = cfg.embed_dim;
    let n = cfg.num_tokens();
    let h = cfg.mlp_hidden();
    let pp = cfg.patch_size * cfg.patch_size;
    let per_block = 4 * (d * d + d) // q, k, v, o
        + n * n // attention bias
        + 2 * 2 * d // two layer norms
        + (h * d + h) + (d * h + d); // mlp
    d * pp + d + d * n + cfg.num_blocks * per_block
}

fn gaussian(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal() * std)
}

/// Adds frozen encoder weights and the trainable bypass to `store`.
pub fn init_encoder(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut Rng) -> Result<()> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let n = cfg.num_tokens();
    let h = cfg.mlp_hidden();
    let pp = cfg.patch_size * cfg.patch_size;

    store.insert("patch/W", gaussian(vec![d, pp], FROZEN_STD, rng), false);
    store.insert("patch/bias", gaussian(vec![d], FROZEN_STD, rng), false);
    store.insert("pos", gaussian(vec![d, n], FROZEN_STD, rng), false);

    let mut adapters = Vec::new();
    for i in 0..cfg.num_blocks {
        let p = |s: &str| format!("block{i}/{s}");
        store.insert(p("ln1/gamma"), Tensor::ones(vec![d]), false);
        store.insert(p("ln1/beta"), Tensor::zeros(vec![d]), false);
        for proj in ["q", "k", "v", "o"] {
            store.insert(p(&format!("{proj}/W")), gaussian(vec![d, d], FROZEN_STD, rng), false);
            store.insert(p(&format!("{proj}/bias")), gaussian(vec![d], FROZEN_STD, rng), false);
        }
        store.insert(p("attn_bias"), Tensor::zeros(vec![n, n]), false);
        store.insert(p("ln2/gamma"), Tensor::ones(vec![d]), false);
        store.insert(p("ln2/beta"), Tensor::zeros(vec![d]), false);
        store.insert(p("mlp1/W"), gaussian(vec![h, d], FROZEN_STD, rng), false);
        store.insert(p("mlp1/bias"), gaussian(vec![h], FROZEN_STD, rng), false);
        store.insert(p("mlp2/W"), gaussian(vec![d, h], FROZEN_STD, rng), false);
        store.insert(p("mlp2/bias"), gaussian(vec![d], FROZEN_STD, rng), false);

        for proj in ADAPTED_PROJECTIONS {
            let weight = store.tensor(&p(&format!("{proj}/W")))?.clone();
            let layer = LoraLinear::new(weight, None, cfg.lora_rank, rng)?;
            adapters.push((p(proj), layer));
        }
    }

    if cfg.use_loose_embedding {
        let refs: Vec<(String, &LoraLinear)> = adapters.iter().map(|(n, l)| (n.clone(), l)).collect();
        let emb = build_loose_embedding(&refs, cfg.pooled_len)?;
        debug_assert_eq!(emb.descriptors, loose_descriptors(cfg));
        store.insert("loose/M", emb.matrix, true);
    } else {
        for (name, layer) in adapters {
            store.insert(format!("{name}/A"), layer.a, true);
            store.insert(format!("{name}/B"), layer.b, true);
        }
    }
    Ok(())
}

/// Encoder output: one column per patch token, row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    /// `[d × grid_h·grid_w]`
    pub grid: Tensor,
    pub grid_h: usize,
    pub grid_w: usize,
}

/// Whether the low-rank bypass participates in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bypass {
    Enabled,
    /// frozen base model only
    Disabled,
}

/// Non-overlapping patches as columns: `[patch² × n_tokens]`, token index
/// `pr·g + pc`, pixels row-major within a patch.
pub fn patch_matrix(image: &Image, cfg: &EncoderConfig) -> Result<Tensor> {
    let s = cfg.image_size;
    if image.rows() != s || image.cols() != s {
        return Err(Error::Tensor(lseg_autograd::TensorError::Dimension(format!(
            "image is {}x{}, encoder expects {s}x{s}",
            image.rows(),
            image.cols()
        ))));
    }
    let (ps, g) = (cfg.patch_size, cfg.grid_size());
    let n = g * g;
    let mut out = vec![0.0; ps * ps * n];
    for pr in 0..g {
        for pc in 0..g {
            let t = pr * g + pc;
            for i in 0..ps {
                for j in 0..ps {
                    out[(i * ps + j) * n + t] = *image.get(pr * ps + i, pc * ps + j);
                }
            }
        }
    }
    Ok(Tensor::new(vec![ps * ps, n], out)?)
}

/// Patch tokens `W_patch · patches + bias + pos`, shape `[d × n_tokens]`.
pub fn patchify(tape: &mut Tape, b: &Binding, image: &Image, cfg: &EncoderConfig) -> Result<Var> {
    let patches = tape.constant(patch_matrix(image, cfg)?);
    let proj = linear_forward(tape, b.var("patch/W")?, Some(b.var("patch/bias")?), patches)?;
    Ok(tape.add(proj, b.var("pos")?)?)
}

/// A projection that may carry a low-rank bypass.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub weight: Var,
    pub bias: Var,
    pub factors: Option<(Var, Var)>,
}

impl Projection {
    fn apply(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        match self.factors {
            Some((a, b)) => lora_forward(
                tape,
                &LoraVars {
                    weight: self.weight,
                    bias: Some(self.bias),
                    a,
                    b,
                },
                f,
            ),
            None => linear_forward(tape, self.weight, Some(self.bias), f),
        }
    }
}

/// Tape handles of one transformer block.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlockVars {
    pub q: Projection,
    pub k: Projection,
    pub v: Projection,
    pub o: Projection,
    pub attn_bias: Var,
    pub ln1: (Var, Var),
    pub ln2: (Var, Var),
    pub mlp1: (Var, Var),
    pub mlp2: (Var, Var),
    pub num_heads: usize,
}

/// Resolves block `i` from the binding, rebuilding adapter factors from the
/// loose matrix when the config uses it.
pub fn block_vars(
    tape: &mut Tape,
    b: &Binding,
    cfg: &EncoderConfig,
    i: usize,
    bypass: Bypass,
) -> Result<TransformerBlockVars> {
    let p = |s: &str| format!("block{i}/{s}");
    let descriptors = cfg.use_loose_embedding.then(|| loose_descriptors(cfg));
    let proj = |tape: &mut Tape, name: &str| -> Result<Projection> {
        let factors = if bypass == Bypass::Enabled && ADAPTED_PROJECTIONS.contains(&name) {
            let layer = p(name);
            Some(match &descriptors {
                Some(desc) => {
                    let m = b.var("loose/M")?;
                    (
                        expand_loose(tape, m, desc, &layer, FactorRole::A)?,
                        expand_loose(tape, m, desc, &layer, FactorRole::B)?,
                    )
                }
                None => (b.var(&format!("{layer}/A"))?, b.var(&format!("{layer}/B"))?),
            })
        } else {
            None
        };
        Ok(Projection {
            weight: b.var(&p(&format!("{name}/W")))?,
            bias: b.var(&p(&format!("{name}/bias")))?,
            factors,
        })
    };
    Ok(TransformerBlockVars {
        q: proj(tape, "q")?,
        k: proj(tape, "k")?,
        v: proj(tape, "v")?,
        o: proj(tape, "o")?,
        attn_bias: b.var(&p("attn_bias"))?,
        ln1: (b.var(&p("ln1/gamma"))?, b.var(&p("ln1/beta"))?),
        ln2: (b.var(&p("ln2/gamma"))?, b.var(&p("ln2/beta"))?),
        mlp1: (b.var(&p("mlp1/W"))?, b.var(&p("mlp1/bias"))?),
        mlp2: (b.var(&p("mlp2/W"))?, b.var(&p("mlp2/bias"))?),
        num_heads: cfg.num_heads,
    })
}

/// Layer norm over the feature axis of a `[d × n]` activation.
pub fn norm_tokens(tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let xt = tape.transpose(x)?;
    let y = tape.layer_norm(xt, gamma, beta, LN_EPS)?;
    Ok(tape.transpose(y)?)
}

/// Multi-head self-attention over the columns of `f` (`[d × n]`).
///
/// Per head, scores are `[n × n]` with queries on rows, scaled by
/// `1/sqrt(head_dim)` and shifted by the frozen additive bias before a
/// softmax over keys.
pub fn attention(tape: &mut Tape, f: Var, block: &TransformerBlockVars) -> Result<Var> {
    let (d, _) = tape.value(f).dims2()?;
    let q = block.q.apply(tape, f)?;
    let k = block.k.apply(tape, f)?;
    let v = block.v.apply(tape, f)?;
    let hd = d / block.num_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut heads = Vec::with_capacity(block.num_heads);
    for h in 0..block.num_heads {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let qh = tape.slice_rows(q, lo, hi)?;
        let kh = tape.slice_rows(k, lo, hi)?;
        let vh = tape.slice_rows(v, lo, hi)?;
        let qt = tape.transpose(qh)?;
        let scores = tape.matmul(qt, kh)?;
        let scores = tape.scale(scores, scale);
        let scores = tape.add(scores, block.attn_bias)?;
        let weights = tape.softmax(scores, 1)?;
        let wt = tape.transpose(weights)?;
        heads.push(tape.matmul(vh, wt)?);
    }
    let merged = if heads.len() == 1 { heads[0] } else { tape.concat_rows(&heads)? };
    block.o.apply(tape, merged)
}

fn block_forward(tape: &mut Tape, x: Var, blk: &TransformerBlockVars) -> Result<Var> {
    let n1 = norm_tokens(tape, x, blk.ln1.0, blk.ln1.1)?;
    let a = attention(tape, n1, blk)?;
    let x = tape.add(x, a)?;
    let n2 = norm_tokens(tape, x, blk.ln2.0, blk.ln2.1)?;
    let h = linear_forward(tape, blk.mlp1.0, Some(blk.mlp1.1), n2)?;
    let h = tape.gelu(h);
    let m = linear_forward(tape, blk.mlp2.0, Some(blk.mlp2.1), h)?;
    Ok(tape.add(x, m)?)
}

/// Patch embedding followed by `num_blocks` transformer blocks.
/// Returns the `[d × n_tokens]` embedding on the tape.
pub fn encoder_forward(
    tape: &mut Tape,
    b: &Binding,
    cfg: &EncoderConfig,
    image: &Image,
    bypass: Bypass,
) -> Result<Var> {
    let mut x = patchify(tape, b, image, cfg)?;
    for i in 0..cfg.num_blocks {
        let blk = block_vars(tape, b, cfg, i, bypass)?;
        x = block_forward(tape, x, &blk)?;
    }
    Ok(x)
}

/// Forward pass without gradient tracking.
pub fn embed_image(store: &ParamStore, cfg: &EncoderConfig, image: &Image, bypass: Bypass) -> Result<ImageEmbedding> {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, false);
    let e = encoder_forward(&mut tape, &b, cfg, image, bypass)?;
    let g = cfg.grid_size();
    Ok(ImageEmbedding {
        grid: tape.value(e).clone(),
        grid_h: g,
        grid_w: g,
    })
}
