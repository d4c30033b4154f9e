//! Training losses: pixel cross-entropy, soft IoU, and their weighted
//! composition over the auxiliary head and the two rounds.
//!
//! Per round: `L = (l1*CE + l2*IoU)(main) + l3 * (l1*CE + l2*IoU)(aux)`.
//! Across rounds: `Loss = alpha * L_round1 + L_round2`.
//! Defaults l1=0.7, l2=0.3, l3=0.4, alpha=0.5.

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

/// Smoothing added to the soft-IoU numerator and denominator so classes
/// absent from both prediction mass and target stay differentiable (their
/// ratio becomes 1, leaving the loss untouched).
pub const IOU_SMOOTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda1: 0.7, lambda2: 0.3, lambda3: 0.4, alpha: 0.5 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("loss.lambda1", self.lambda1),
            ("loss.lambda2", self.lambda2),
            ("loss.lambda3", self.lambda3),
            ("loss.alpha", self.alpha),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean pixel cross-entropy of raw logits against class indices.
pub fn ce_loss<E: Float>(tape: &mut Tape<E>, logits: Var, target: &[u8]) -> Result<Var> {
    tape.cross_entropy(logits, target)
}

/// Soft IoU loss over class probabilities: one minus the mean over classes of
/// `(sum p*t + s) / (sum p + t - p*t + s)` with one-hot targets `t` and
/// smoothing `s`. In [0, 1], differentiable in the probabilities.
pub fn iou_loss<E: Float>(tape: &mut Tape<E>, probs: Var, target: &[u8]) -> Result<Var> {
    let (c, h, w) = tape.value(probs).shape().chw()?;
    let hw = h * w;
    if target.len() != hw {
        return Err(Error::data(format!(
            "iou_loss: target has {} pixels, probabilities are {h}x{w}",
            target.len()
        )));
    }
    let mut onehot = vec![E::ZERO; c * hw];
    let mut class_counts = vec![E::ZERO; c];
    for (s, &t) in target.iter().enumerate() {
        let t = t as usize;
        if t >= c {
            return Err(Error::data(format!(
                "iou_loss: class index {t} out of range [0,{c}) at pixel ({}, {})",
                s / w,
                s % w
            )));
        }
        onehot[t * hw + s] = E::ONE;
        class_counts[t] += E::ONE;
    }

    let onehot = tape.constant(Tensor::from_vec([c, h, w], onehot));
    let counts = tape.constant(Tensor::from_vec([c], class_counts));

    let prod = tape.mul(probs, onehot)?;
    let intersection = tape.sum_per_channel(prod)?;
    let prob_mass = tape.sum_per_channel(probs)?;
    let sum = tape.add(prob_mass, counts)?;
    let union = tape.sub(sum, intersection)?;

    let num = tape.affine(intersection, 1.0, IOU_SMOOTH);
    let den = tape.affine(union, 1.0, IOU_SMOOTH);
    let iou = tape.div(num, den)?;
    let total = tape.sum_all(iou);
    let mean = tape.scale(total, 1.0 / c as f64);
    Ok(tape.affine(mean, -1.0, 1.0))
}

/// One round's loss: the CE/IoU mix on the main logits plus `lambda3` times
/// the same mix on the auxiliary logits.
pub fn round_loss<E: Float>(
    tape: &mut Tape<E>,
    cfg: &LossConfig,
    main_logits: Var,
    aux_logits: Option<Var>,
    target: &[u8],
) -> Result<Var> {
    let main = head_loss(tape, cfg, main_logits, target)?;
    match aux_logits {
        Some(aux) => {
            let aux = head_loss(tape, cfg, aux, target)?;
            let weighted = tape.scale(aux, cfg.lambda3);
            tape.add(main, weighted)
        }
        None => Ok(main),
    }
}

fn head_loss<E: Float>(
    tape: &mut Tape<E>,
    cfg: &LossConfig,
    logits: Var,
    target: &[u8],
) -> Result<Var> {
    let ce = ce_loss(tape, logits, target)?;
    let probs = tape.softmax_channels(logits)?;
    let iou = iou_loss(tape, probs, target)?;
    let ce_w = tape.scale(ce, cfg.lambda1);
    let iou_w = tape.scale(iou, cfg.lambda2);
    tape.add(ce_w, iou_w)
}

/// `alpha * L_round1 + L_round2`. Gradients reach the shared weights through
/// both rounds whenever alpha > 0.
pub fn total_loss<E: Float>(
    tape: &mut Tape<E>,
    cfg: &LossConfig,
    first: Var,
    second: Var,
) -> Result<Var> {
    let weighted = tape.scale(first, cfg.alpha);
    tape.add(weighted, second)
}
