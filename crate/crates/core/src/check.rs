//! End-to-end finite-difference check of the training loss gradient.

use lseg_autograd::{relative_error, DEFAULT_EPS};

use crate::data::Example;
use crate::encoder::{Bypass, EncoderConfig};
use crate::error::Result;
use crate::grid::Grid;
use crate::loss::LossConfig;
use crate::model::Model;
use crate::prompt::simulate_prompts;
use crate::rng::Rng;
use crate::train::{sample_loss, sample_loss_and_grads, Sample};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Worst relative error seen for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < GRADCHECK_TOLERANCE
    }

    /// Worst error over parameters whose name starts with `prefix`.
    pub fn group_max(&self, prefix: &str) -> Option<f64> {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.max_rel_err)
            .reduce(f64::max)
    }
}

/// A small configuration that keeps the check fast.
pub fn small_config(use_loose_embedding: bool) -> EncoderConfig {
    EncoderConfig {
        image_size: 16,
        patch_size: 4,
        embed_dim: 8,
        num_blocks: 2,
        num_heads: 2,
        mlp_ratio: 2,
        lora_rank: 2,
        use_loose_embedding,
        pooled_len: 8,
    }
}

/// A random textured disc with a point-and-box prompt.
pub fn synthetic_sample(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Sample> {
    let s = cfg.image_size as f64;
    let (cy, cx, rad) = (rng.uniform_in(0.35, 0.65) * s, rng.uniform_in(0.35, 0.65) * s, rng.uniform_in(0.2, 0.3) * s);
    let mask = Grid::from_fn(cfg.image_size, cfg.image_size, |r, c| {
        (r as f64 + 0.5 - cy).powi(2) + (c as f64 + 0.5 - cx).powi(2) <= rad * rad
    });
    let image = mask.map(|&m| if m { 0.7 } else { 0.3 });
    let image = Grid::from_fn(image.rows(), image.cols(), |r, c| image.get(r, c) + 0.05 * rng.normal());
    let input = Example::new(image, mask)?;
    let prompts = simulate_prompts(&input.mask, 2, true, 0.1, rng)?;
    Ok(Sample {
        task: 0,
        example: 0,
        input,
        prompts,
    })
}

/// Compares analytic and central-difference gradients of the combined loss
/// at `coords_per_param` random coordinates of every trainable tensor.
///
/// Trainable values are first jittered so that no factor sits at its
/// zero initialization, which would hide the gradient of its partner.
pub fn end_to_end_gradcheck(cfg: &EncoderConfig, seed: u64, coords_per_param: usize) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let mut model = Model::new(*cfg, seed)?;
    for name in model.params.trainable_names() {
        for v in model.params.tensor_mut(&name)?.data_mut() {
            *v += 0.1 * rng.normal();
        }
    }
    let sample = synthetic_sample(cfg, &mut rng)?;
    let loss_cfg = LossConfig::default();
    let names = model.params.trainable_names();
    let (_, grads) = sample_loss_and_grads(&model, &loss_cfg, &sample, &names)?;

    let mut params = Vec::with_capacity(names.len());
    for (name, grad) in names.iter().zip(&grads) {
        let len = grad.len();
        let coords = if len <= coords_per_param {
            (0..len).collect()
        } else {
            rng.choose_distinct(len, coords_per_param)
        };
        let mut worst = 0.0f64;
        for &i in &coords {
            let numeric = central_difference(&mut model, name, i, &loss_cfg, &sample)?;
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
        params.push(ParamCheck {
            name: name.clone(),
            coords: coords.len(),
            max_rel_err: worst,
        });
    }
    Ok(GradCheckReport { params })
}

fn central_difference(model: &mut Model, name: &str, i: usize, loss_cfg: &LossConfig, sample: &Sample) -> Result<f64> {
    let original = model.params.tensor(name)?.data()[i];
    let at = |model: &mut Model, v: f64| -> Result<f64> {
        model.params.tensor_mut(name)?.data_mut()[i] = v;
        sample_loss(model, loss_cfg, sample, Bypass::Enabled)
    };
    let plus = at(model, original + DEFAULT_EPS)?;
    let minus = at(model, original - DEFAULT_EPS)?;
    model.params.tensor_mut(name)?.data_mut()[i] = original;
    Ok((plus - minus) / (2.0 * DEFAULT_EPS))
}

