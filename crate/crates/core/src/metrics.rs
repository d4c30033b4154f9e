//! Confusion-matrix IoU metrics.
//!
//! One matrix accumulates over a whole split (rows = ground truth, columns =
//! prediction); per-class IoU is `TP / (TP + FP + FN)`. A class with no
//! ground-truth pixels and no predictions anywhere in the split has an empty
//! denominator and is excluded from the mean.

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    /// Total pixels accumulated.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn update(&mut self, gt: &[u8], pred: &[u8]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::data(format!(
                "confusion update: {} ground-truth vs {} predicted pixels",
                gt.len(),
                pred.len()
            )));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            let (g, p) = (g as usize, p as usize);
            if g >= self.classes || p >= self.classes {
                return Err(Error::data(format!(
                    "confusion update: label {} exceeds class count {}",
                    g.max(p),
                    self.classes
                )));
            }
            self.counts[g * self.classes + p] += 1;
        }
        Ok(())
    }

    /// Merge a partial matrix from another worker. Associative.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the denominator is empty.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.count(c, c);
                let fp: u64 = (0..self.classes).filter(|&g| g != c).map(|g| self.count(g, c)).sum();
                let fun: u64 = (0..self.classes).filter(|&p| p != c).map(|p| self.count(c, p)).sum();
                let denom = tp + fp + fun;
                if denom == 0 {
                    None
                } else {
                    Some(tp as f64 / denom as f64)
                }
            })
            .collect()
    }

    /// Mean IoU over classes with a non-empty denominator.
    pub fn mean_iou(&self) -> f64 {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            0.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        }
    }
}

/// Per-pixel argmax over the channel axis of a `CxHxW` logit map.
/// Ties resolve to the lowest class index.
pub fn argmax_channels<E: Float>(logits: &Tensor<E>) -> Vec<u8> {
    let (c, h, w) = logits.shape().chw().expect("argmax needs CxHxW");
    let hw = h * w;
    let data = logits.data();
    let mut out = vec![0u8; hw];
    for (s, o) in out.iter_mut().enumerate() {
        let mut best = data[s];
        let mut best_c = 0usize;
        for ci in 1..c {
            let v = data[ci * hw + s];
            if v > best {
                best = v;
                best_c = ci;
            }
        }
        *o = best_c as u8;
    }
    out
}
