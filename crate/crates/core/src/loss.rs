//! Focal and Dice objectives on soft low-resolution targets.

use lseg_autograd::{Tape, Tensor, Var};

use crate::decoder::downsample_gt;
use crate::error::{Error, Result};
use crate::grid::Mask;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mu1: 1.0,
            mu2: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            dice_eps: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu1 >= 0.0
            && self.mu2 >= 0.0
            && self.focal_gamma >= 0.0
            && self.focal_alpha > 0.0
            && self.focal_alpha < 1.0
            && self.dice_eps >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid loss settings {self:?}")))
        }
    }
}

fn check_shapes(tape: &Tape, a: Var, b: Var, op: &str) -> Result<()> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(Error::Tensor(lseg_autograd::TensorError::shape(op, sa, sb)));
    }
    Ok(())
}

/// Soft-target focal loss, averaged over pixels.
pub fn focal_loss(tape: &mut Tape, probs: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    check_shapes(tape, probs, target, "focal_loss")?;
    let (a, g) = (cfg.focal_alpha, cfg.focal_gamma);
    let p = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let q = tape.affine(p, -1.0, 1.0);
    let not_t = tape.affine(target, -1.0, 1.0);

    let log_p = tape.log(p);
    let wq = tape.powf(q, g);
    let pos = tape.mul(wq, log_p)?;
    let pos = tape.mul(target, pos)?;
    let pos = tape.scale(pos, a);

    let log_q = tape.log(q);
    let wp = tape.powf(p, g);
    let neg = tape.mul(wp, log_q)?;
    let neg = tape.mul(not_t, neg)?;
    let neg = tape.scale(neg, 1.0 - a);

    let total = tape.add(pos, neg)?;
    let m = tape.mean(total);
    Ok(tape.scale(m, -1.0))
}

/// `1 − (2Σpt + ε)/(Σp + Σt + ε)`.
pub fn dice_loss(tape: &mut Tape, probs: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    check_shapes(tape, probs, target, "dice_loss")?;
    let pt = tape.mul(probs, target)?;
    let inter = tape.sum(pt);
    let num = tape.affine(inter, 2.0, cfg.dice_eps);
    let sp = tape.sum(probs);
    let st = tape.sum(target);
    let den = tape.add(sp, st)?;
    let den = tape.affine(den, 1.0, cfg.dice_eps);
    let ratio = tape.div(num, den)?;
    Ok(tape.affine(ratio, -1.0, 1.0))
}

/// Focal and Dice terms of the combined loss, in that order, plus the
/// weighted total.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub focal: Var,
    pub dice: Var,
    pub total: Var,
}

/// `μ₁·focal + μ₂·dice` of `sigmoid(logits)` against the block-averaged mask.
pub fn combined_loss_terms(
    tape: &mut Tape,
    logits: Var,
    gt: &Mask,
    output_stride: usize,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let (h, w) = tape.value(logits).dims2()?;
    if gt.rows() != h * output_stride || gt.cols() != w * output_stride {
        return Err(Error::Argument(format!(
            "mask {}x{} does not match {h}x{w} logits at stride {output_stride}",
            gt.rows(),
            gt.cols()
        )));
    }
    let target = tape.constant(downsample_gt(gt, output_stride)?.to_tensor());
    let probs = tape.sigmoid(logits);
    let focal = focal_loss(tape, probs, target, cfg)?;
    let dice = dice_loss(tape, probs, target, cfg)?;
    let f = tape.scale(focal, cfg.mu1);
    let d = tape.scale(dice, cfg.mu2);
    let total = tape.add(f, d)?;
    Ok(LossTerms { focal, dice, total })
}

pub fn combined_loss(tape: &mut Tape, logits: Var, gt: &Mask, output_stride: usize, cfg: &LossConfig) -> Result<Var> {
    Ok(combined_loss_terms(tape, logits, gt, output_stride, cfg)?.total)
}

/// Evaluates a loss built by `f` on plain tensors.
fn eval2(
    probs: &Tensor,
    target: &Tensor,
    cfg: &LossConfig,
    f: fn(&mut Tape, Var, Var, &LossConfig) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let t = tape.constant(target.clone());
    let l = f(&mut tape, p, t, cfg)?;
    Ok(tape.value(l).item()?)
}

pub fn focal_loss_value(probs: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<f64> {
    eval2(probs, target, cfg, focal_loss)
}

pub fn dice_loss_value(probs: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<f64> {
    eval2(probs, target, cfg, dice_loss)
}

pub fn combined_loss_value(logits: &Tensor, gt: &Mask, output_stride: usize, cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let v = combined_loss(&mut tape, l, gt, output_stride, cfg)?;
    Ok(tape.value(v).item()?)
}
