//! Mask decoder: the embedding is standardized per feature, a learned mask
//! token and the prompt tokens attend to the image, the image attends back to the tokens, and the mask token's MLP
//! output is dotted with every image token to give one logit per patch.

use lseg_autograd::{sigmoid, Tape, Tensor, Var};

use crate::encoder::{norm_tokens, EncoderConfig, ImageEmbedding, LN_EPS};
use crate::error::{Error, Result};
use crate::grid::{resize_bilinear, Grid, Image, Mask};
use crate::lora::linear_forward;
use crate::params::{Binding, ParamStore};
use crate::prompt::dense_encoding;
use crate::rng::Rng;

const ATTENTION_BLOCKS: [&str; 2] = ["dec/t2i", "dec/i2t"];
const HEAD_OUT_STD: f64 = 0.01;

/// Low-resolution mask logits, one per encoder token.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLogits {
    /// `[g × g]`
    pub logits: Tensor,
    pub output_stride: usize,
}

/// Internal width of the decoder attention layers.
pub fn attention_dim(embed_dim: usize) -> usize {
    (embed_dim / 2).max(1)
}

pub fn param_count(d: usize) -> usize {
    let c = attention_dim(d);
    let attn = 3 * (c * d + c) + (d * c + d);
    d + ATTENTION_BLOCKS.len() * attn + 2 * d + 2 * (d * d + d)
}

pub fn init_decoder(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut Rng) {
    let d = cfg.embed_dim;
    let c = attention_dim(d);
    let mut gauss = |shape: Vec<usize>, std: f64| Tensor::from_fn(shape, |_| rng.normal() * std);
    store.insert("dec/mask_token", gauss(vec![d, 1], 1.0), true);
    for blk in ATTENTION_BLOCKS {
        for proj in ["q", "k", "v"] {
            store.insert(format!("{blk}/{proj}/W"), gauss(vec![c, d], 1.0 / (d as f64).sqrt()), true);
            store.insert(format!("{blk}/{proj}/bias"), Tensor::zeros(vec![c]), true);
        }
        store.insert(format!("{blk}/o/W"), gauss(vec![d, c], 1.0 / (c as f64).sqrt()), true);
        store.insert(format!("{blk}/o/bias"), Tensor::zeros(vec![d]), true);
    }
    store.insert("dec/t2i/ln/gamma", Tensor::ones(vec![d]), true);
    store.insert("dec/t2i/ln/beta", Tensor::zeros(vec![d]), true);
    store.insert("dec/head/W1", gauss(vec![d, d], 1.0 / (d as f64).sqrt()), true);
    store.insert("dec/head/b1", Tensor::zeros(vec![d]), true);
    store.insert("dec/head/W2", gauss(vec![d, d], HEAD_OUT_STD), true);
    store.insert("dec/head/b2", Tensor::zeros(vec![d]), true);
}

/// Single-head attention of the columns of `q_in` over the columns of
/// `k_in`/`v_in`, projected through the decoder block `prefix`.
fn cross_attention(tape: &mut Tape, b: &Binding, prefix: &str, q_in: Var, k_in: Var, v_in: Var) -> Result<Var> {
    let lin = |tape: &mut Tape, name: &str, x: Var| -> Result<Var> {
        linear_forward(
            tape,
            b.var(&format!("{prefix}/{name}/W"))?,
            Some(b.var(&format!("{prefix}/{name}/bias"))?),
            x,
        )
    };
    let q = lin(tape, "q", q_in)?;
    let k = lin(tape, "k", k_in)?;
    let v = lin(tape, "v", v_in)?;
    let c = tape.value(q).shape()[0];
    let qt = tape.transpose(q)?;
    let scores = tape.matmul(qt, k)?;
    let scores = tape.scale(scores, 1.0 / (c as f64).sqrt());
    let weights = tape.softmax(scores, 1)?;
    let wt = tape.transpose(weights)?;
    let mixed = tape.matmul(v, wt)?;
    lin(tape, "o", mixed)
}

/// Mask logits `[g × g]` for one image embedding (`[d × g²]`) and its
/// prompt tokens (`[d × n_prompt]`).
pub fn decode(
    tape: &mut Tape,
    b: &Binding,
    store: &ParamStore,
    embedding: Var,
    prompt_tokens: Var,
    grid: usize,
) -> Result<Var> {
    let (d, n) = tape.value(embedding).dims2()?;
    let (pd, _) = tape.value(prompt_tokens).dims2()?;
    if pd != d || n != grid * grid {
        return Err(Error::Tensor(lseg_autograd::TensorError::Dimension(format!(
            "embedding {:?} and prompt tokens {:?} do not match a {grid}x{grid} grid",
            tape.value(embedding).shape(),
            tape.value(prompt_tokens).shape()
        ))));
    }
    let pe = tape.constant(dense_encoding(store.tensor("prompt/freq")?, grid));
    // each feature standardized across the image's tokens
    let ones = tape.constant(Tensor::ones(vec![n]));
    let zeros = tape.constant(Tensor::zeros(vec![n]));
    let embedding = tape.layer_norm(embedding, ones, zeros, LN_EPS)?;
    let tokens = tape.concat_cols(&[b.var("dec/mask_token")?, prompt_tokens])?;
    let image_keys = tape.add(embedding, pe)?;

    // tokens attend over themselves and the image
    let keys = tape.concat_cols(&[tokens, image_keys])?;
    let values = tape.concat_cols(&[tokens, embedding])?;
    let a = cross_attention(tape, b, "dec/t2i", tokens, keys, values)?;
    let tokens = tape.add(tokens, a)?;
    let tokens = norm_tokens(tape, tokens, b.var("dec/t2i/ln/gamma")?, b.var("dec/t2i/ln/beta")?)?;

    // image attends back to the tokens
    let back = cross_attention(tape, b, "dec/i2t", image_keys, tokens, tokens)?;
    let image = tape.add(embedding, back)?;

    let mask_token = tape.slice_cols(tokens, 0, 1)?;
    let h = linear_forward(tape, b.var("dec/head/W1")?, Some(b.var("dec/head/b1")?), mask_token)?;
    let h = tape.gelu(h);
    let h = linear_forward(tape, b.var("dec/head/W2")?, Some(b.var("dec/head/b2")?), h)?;
    let ht = tape.transpose(h)?;
    let logits = tape.matmul(ht, image)?;
    Ok(tape.reshape(logits, vec![grid, grid])?)
}

/// Decodes an already computed embedding without gradient tracking.
pub fn decode_embedding(
    store: &ParamStore,
    cfg: &EncoderConfig,
    emb: &ImageEmbedding,
    prompts: &crate::prompt::PromptSet,
) -> Result<MaskLogits> {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, false);
    let e = tape.constant(emb.grid.clone());
    let pt = crate::prompt::encode_prompts(&mut tape, &b, store, prompts, cfg)?;
    let l = decode(&mut tape, &b, store, e, pt, emb.grid_h)?;
    Ok(MaskLogits {
        logits: tape.value(l).clone(),
        output_stride: cfg.patch_size,
    })
}

/// Block-average of a binary mask by `factor`: soft targets in `[0, 1]`.
pub fn downsample_gt(mask: &Mask, factor: usize) -> Result<Grid<f64>> {
    if factor == 0 || !mask.rows().is_multiple_of(factor) || !mask.cols().is_multiple_of(factor) {
        return Err(Error::Argument(format!(
            "factor {factor} does not divide mask size {}x{}",
            mask.rows(),
            mask.cols()
        )));
    }
    let (rows, cols) = (mask.rows() / factor, mask.cols() / factor);
    let area = (factor * factor) as f64;
    Ok(Grid::from_fn(rows, cols, |r, c| {
        let mut hits = 0usize;
        for i in 0..factor {
            for j in 0..factor {
                hits += *mask.get(r * factor + i, c * factor + j) as usize;
            }
        }
        hits as f64 / area
    }))
}

/// Bilinear upsampling of the logits to `size × size`, then sigmoid.
pub fn upsample_logits(ml: &MaskLogits, size: usize) -> Result<Image> {
    let low = Grid::from_tensor(&ml.logits)
        .ok_or_else(|| Error::Argument("mask logits must be a matrix".into()))?;
    if !size.is_multiple_of(low.rows()) || !size.is_multiple_of(low.cols()) {
        return Err(Error::Argument(format!(
            "{size} is not a multiple of the {}x{} logit grid",
            low.rows(),
            low.cols()
        )));
    }
    Ok(resize_bilinear(&low, size, size).map(|&v| sigmoid(v)))
}

pub fn threshold(prob: &Image, level: f64) -> Mask {
    prob.map(|&p| p > level)
}
