//! Adam fine-tuning of the trainable parameters on simulated prompts.

use lseg_autograd::{Tape, Tensor};
use rayon::prelude::*;

use crate::data::{augment, resize_to_input, Dataset, Example, DEFAULT_NOISE_SIGMA};
use crate::encoder::{Bypass, EncoderConfig};
use crate::error::{Error, Result};
use crate::loss::{combined_loss, LossConfig};
use crate::model::Model;
use crate::prompt::{simulate_prompts, PromptSet, DEFAULT_BOX_OFFSET_FRAC};
use crate::rng::{derive_seed, Rng};

pub const LOG_EVERY: usize = 10;
/// Point prompts per training example are drawn from `1..=MAX_TRAIN_POINTS`.
pub const MAX_TRAIN_POINTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub box_offset_frac: f64,
    /// Task ids to train on; empty means every task in the dataset.
    pub train_tasks: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            loss: LossConfig::default(),
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            steps: 2000,
            batch_size: 4,
            seed: 0,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            box_offset_frac: DEFAULT_BOX_OFFSET_FRAC,
            train_tasks: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.loss.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must be in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.box_offset_frac >= 0.0) {
            return bad("noise_sigma and box_offset_frac must be non-negative".into());
        }
        Ok(())
    }

    /// Seed of the model initialization.
    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, 0)
    }

    fn sample_root(&self) -> u64 {
        derive_seed(self.seed, 1)
    }
}

/// Adam state over the trainable parameters, in store order.
#[derive(Debug, Clone)]
pub struct Adam {
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(model: &Model, cfg: &TrainConfig) -> Result<Self> {
        let names = model.params.trainable_names();
        let zeros = names
            .iter()
            .map(|n| Ok(Tensor::zeros(model.params.tensor(n)?.shape().to_vec())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names,
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// One bias-corrected update with `grads` aligned to [`Adam::names`].
    pub fn step(&mut self, model: &mut Model, grads: &[Tensor]) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, name) in self.names.iter().enumerate() {
            let w = model.params.tensor_mut(name)?;
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (j, w) in w.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One prepared training input.
#[derive(Debug, Clone)]
pub struct Sample {
    pub task: usize,
    pub example: usize,
    pub input: Example,
    pub prompts: PromptSet,
}

/// Deterministic draw of batch item `item` at `step`: example choice,
/// augmentation, resize and prompt simulation.
pub fn training_sample(cfg: &TrainConfig, data: &Dataset, step: usize, item: usize) -> Result<Sample> {
    let index = data.index();
    if index.is_empty() {
        return Err(Error::Data("training set has no examples".into()));
    }
    let job = (step * cfg.batch_size + item) as u64;
    let mut rng = Rng::stream(cfg.sample_root(), job);
    let (task, example) = index[rng.below(index.len())];
    let ex = &data.tasks[task].examples[example];
    let input = resize_to_input(&augment(ex, &mut rng, cfg.noise_sigma), cfg.encoder.image_size)?;
    let k = 1 + rng.below(MAX_TRAIN_POINTS);
    let prompts = simulate_prompts(&input.mask, k, true, cfg.box_offset_frac, &mut rng)?;
    Ok(Sample {
        task,
        example,
        input,
        prompts,
    })
}

/// Loss of one sample and the gradients of the trainable parameters in
/// `names` order.
pub fn sample_loss_and_grads(
    model: &Model,
    loss_cfg: &LossConfig,
    sample: &Sample,
    names: &[String],
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape, true);
    let logits = model.forward(&mut tape, &b, &sample.input.image, &sample.prompts, Bypass::Enabled)?;
    let loss = combined_loss(&mut tape, logits, &sample.input.mask, model.config.patch_size, loss_cfg)?;
    let value = tape.value(loss).item()?;
    let mut grads = tape.backward(loss)?;
    let g = names
        .iter()
        .map(|n| {
            let v = b.var(n)?;
            grads
                .take(v)
                .ok_or_else(|| Error::Lookup(format!("gradient of {n}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((value, g))
}

/// Loss of one sample without gradients.
pub fn sample_loss(model: &Model, loss_cfg: &LossConfig, sample: &Sample, bypass: Bypass) -> Result<f64> {
    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape, false);
    let logits = model.forward(&mut tape, &b, &sample.input.image, &sample.prompts, bypass)?;
    let loss = combined_loss(&mut tape, logits, &sample.input.mask, model.config.patch_size, loss_cfg)?;
    Ok(tape.value(loss).item()?)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean batch loss of every step.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    /// `(step, loss)` every [`LOG_EVERY`] steps.
    pub fn log(&self) -> Vec<(usize, f64)> {
        self.losses
            .iter()
            .copied()
            .enumerate()
            .filter(|(s, _)| s % LOG_EVERY == 0)
            .collect()
    }
}

/// Restricts `data` to the configured training tasks.
pub fn training_set(cfg: &TrainConfig, data: &Dataset) -> Result<Dataset> {
    let set = if cfg.train_tasks.is_empty() {
        data.clone()
    } else {
        data.subset(&cfg.train_tasks)?
    };
    if set.num_examples() == 0 {
        return Err(Error::Data("training set has no examples".into()));
    }
    Ok(set)
}

/// Trains a freshly initialized model.
pub fn train(cfg: &TrainConfig, data: &Dataset, on_log: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::new(cfg.encoder, cfg.init_seed())?;
    train_from(model, cfg, data, on_log)
}

/// Continues training `model`; `on_log` sees every [`LOG_EVERY`]-th step.
pub fn train_from(
    mut model: Model,
    cfg: &TrainConfig,
    data: &Dataset,
    mut on_log: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let set = training_set(cfg, data)?;
    let mut adam = Adam::new(&model, cfg)?;
    let names = adam.names().to_vec();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let results = (0..cfg.batch_size)
            .into_par_iter()
            .map(|item| {
                let s = training_sample(cfg, &set, step, item)?;
                sample_loss_and_grads(&model, &cfg.loss, &s, &names)
            })
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / cfg.batch_size as f64;
        let mut loss = 0.0;
        let mut grads: Vec<Tensor> = names
            .iter()
            .map(|n| Ok(Tensor::zeros(model.params.tensor(n)?.shape().to_vec())))
            .collect::<Result<_>>()?;
        for (l, g) in results {
            loss += l * scale;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                for (a, x) in acc.data_mut().iter_mut().zip(gi.data()) {
                    *a += scale * x;
                }
            }
        }
        if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        if step % LOG_EVERY == 0 {
            on_log(step, loss);
        }
        losses.push(loss);
        adam.step(&mut model, &grads)?;
    }
    Ok(TrainOutcome { model, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validates() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
