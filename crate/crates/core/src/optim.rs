//! Adam with bias correction and the per-epoch cosine learning-rate decay.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Float, Tensor};

/// `0.5 * lr0 * (1 + cos(pi * epoch / epochs))`, floored at zero.
pub fn cosine_lr(epoch: usize, epochs: usize, lr0: f64) -> f64 {
    assert!(epochs > 0);
    let t = (epoch as f64 / epochs as f64).min(1.0);
    (0.5 * lr0 * (1.0 + (std::f64::consts::PI * t).cos())).max(0.0)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam state: first/second moment per parameter plus the step counter.
pub struct Adam<E: Float> {
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    step: u64,
}

impl<E: Float> Adam<E> {
    pub fn new(store: &ParamStore<E>) -> Self {
        let m = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape().clone())).collect();
        let v = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape().clone())).collect();
        Adam { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update from the gradients currently accumulated in
    /// the store. Gradients are left untouched; callers reset them.
    pub fn step(&mut self, store: &mut ParamStore<E>, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let b1 = E::from_f64(ADAM_BETA1);
        let b2 = E::from_f64(ADAM_BETA2);
        let one_m_b1 = E::from_f64(1.0 - ADAM_BETA1);
        let one_m_b2 = E::from_f64(1.0 - ADAM_BETA2);
        let eps = E::from_f64(ADAM_EPS);
        let lr_e = E::from_f64(lr);
        let inv_bc1 = E::from_f64(1.0 / bc1);
        let inv_bc2 = E::from_f64(1.0 / bc2);

        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            if !p.grad.all_finite() {
                return Err(Error::internal(format!(
                    "non-finite gradient in parameter {}",
                    p.name
                )));
            }
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let val = p.value.data_mut();
            for ((x, g), (mi, vi)) in
                val.iter_mut().zip(p.grad.data()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = *g;
                *mi = b1 * *mi + one_m_b1 * g;
                *vi = b2 * *vi + one_m_b2 * g * g;
                let m_hat = *mi * inv_bc1;
                let v_hat = *vi * inv_bc2;
                *x = *x - lr_e * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
