//! The assembled segmentation model: frozen encoder with bypass, prompt
//! encoder and mask decoder sharing one parameter store.

use lseg_autograd::{Tape, Var};

use crate::data::Example;
use crate::decoder::{self, decode, upsample_logits, MaskLogits};
use crate::encoder::{self, encoder_forward, Bypass, EncoderConfig, ImageEmbedding};
use crate::error::Result;
use crate::grid::Image;
use crate::params::{Binding, ParamStore};
use crate::prompt::{self, encode_prompts, PromptSet};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub params: ParamStore,
}

impl Model {
    /// Encoder, prompt encoder and decoder each draw from their own stream of
    /// `seed`, so the frozen base depends only on the seed and the encoder
    /// shape.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        encoder::init_encoder(&mut params, &config, &mut Rng::stream(seed, 0))?;
        prompt::init_prompt_encoder(&mut params, &config, &mut Rng::stream(seed, 1));
        decoder::init_decoder(&mut params, &config, &mut Rng::stream(seed, 2));
        Ok(Self { config, params })
    }

    /// Low-resolution logits for one image and prompt set on `tape`.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, image: &Image, prompts: &PromptSet, bypass: Bypass) -> Result<Var> {
        let emb = encoder_forward(tape, b, &self.config, image, bypass)?;
        let pt = encode_prompts(tape, b, &self.params, prompts, &self.config)?;
        decode(tape, b, &self.params, emb, pt, self.config.grid_size())
    }

    pub fn embed(&self, image: &Image, bypass: Bypass) -> Result<ImageEmbedding> {
        encoder::embed_image(&self.params, &self.config, image, bypass)
    }

    pub fn decode(&self, emb: &ImageEmbedding, prompts: &PromptSet) -> Result<MaskLogits> {
        decoder::decode_embedding(&self.params, &self.config, emb, prompts)
    }

    pub fn predict_logits(&self, image: &Image, prompts: &PromptSet) -> Result<MaskLogits> {
        self.decode(&self.embed(image, Bypass::Enabled)?, prompts)
    }

    pub fn input_size(&self) -> usize {
        self.config.image_size
    }
}

/// Anything that maps an image and prompt sets to full-resolution
/// foreground probabilities, one map per prompt set.
pub trait Predictor: Sync {
    fn input_size(&self) -> usize;
    fn predict(&self, ex: &Example, sets: &[PromptSet]) -> Result<Vec<Image>>;
}

impl Predictor for Model {
    fn input_size(&self) -> usize {
        self.config.image_size
    }

    fn predict(&self, ex: &Example, sets: &[PromptSet]) -> Result<Vec<Image>> {
        let emb = self.embed(&ex.image, Bypass::Enabled)?;
        sets.iter()
            .map(|ps| upsample_logits(&self.decode(&emb, ps)?, self.config.image_size))
            .collect()
    }
}

/// Returns the ground-truth mask as a certain prediction.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthPredictor {
    pub size: usize,
}

impl Predictor for GroundTruthPredictor {
    fn input_size(&self) -> usize {
        self.size
    }

    fn predict(&self, ex: &Example, sets: &[PromptSet]) -> Result<Vec<Image>> {
        Ok(sets.iter().map(|_| ex.mask.to_f64()).collect())
    }
}
