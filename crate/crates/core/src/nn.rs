//! Parameter storage and the small layer vocabulary the model is built from.
//!
//! Layers hold [`ParamId`]s plus hyperparameters; tensors live in one
//! [`ParamStore`] keyed by unique dotted names (e.g.
//! `encoder.stage1.block0.attn.q.weight`). A forward pass binds parameters
//! onto a tape with `tracked`, so the same store can drive any number of
//! rounds with shared weights.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::rng::Rng;
use crate::tensor::tape::{Gradients, ParamId, Tape, Var};
use crate::tensor::{Float, Tensor};

/// A named trainable tensor together with its gradient accumulator.
pub struct Parameter<E: Float> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
    pub trainable: bool,
}

/// All parameters of one model instance.
pub struct ParamStore<E: Float> {
    entries: Vec<Parameter<E>>,
    by_name: HashMap<String, ParamId>,
}

impl<E: Float> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::internal(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        let grad = Tensor::zeros(value.shape().clone());
        self.entries.push(Parameter { name: name.clone(), value, grad, trainable: true });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<E> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<E> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<E> {
        &self.entries[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<E>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<E>)> {
        self.entries.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Parameter names in registration order.
    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = Tensor::zeros(p.value.shape().clone());
        }
    }

    /// Add a backward pass's gradients into the per-parameter accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<E>) {
        self.accumulate_scaled(grads, E::ONE);
    }

    /// `grad += scale * g`, e.g. for averaging per-sample gradients.
    pub fn accumulate_scaled(&mut self, grads: &Gradients<E>, scale: E) {
        for (id, g) in grads.iter() {
            let entry = &mut self.entries[id.0];
            debug_assert_eq!(entry.grad.shape(), g.shape());
            let dst = entry.grad.data_mut();
            for (d, &s) in dst.iter_mut().zip(g.data()) {
                *d += scale * s;
            }
        }
    }

    /// Bind a parameter onto a tape as a gradient-tracked leaf.
    pub fn tracked(&self, tape: &mut Tape<E>, id: ParamId) -> Var {
        tape.leaf_param(self.entries[id.0].value.clone(), id)
    }

    /// Same parameters in a different precision (names and order preserved).
    pub fn cast<F: Float>(&self) -> ParamStore<F> {
        let mut out = ParamStore::new();
        for p in &self.entries {
            out.add(p.name.clone(), p.value.cast::<F>()).expect("names stay unique");
        }
        out
    }
}

impl<E: Float> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Truncated normal (sigma 0.02, cut at two sigma) for weights.
pub fn init_weight<E: Float>(rng: &mut Rng, shape: &[usize]) -> Tensor<E> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| E::from_f64(rng.trunc_normal(0.02))).collect())
}

/// 2-D convolution layer.
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init<E: Float>(
        store: &mut ParamStore<E>,
        rng: &mut Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || !in_ch.is_multiple_of(groups) || !out_ch.is_multiple_of(groups) {
            return Err(Error::config(format!(
                "{name}: groups={groups} must divide in_channels={in_ch} and out_channels={out_ch}"
            )));
        }
        let weight = store.add(
            format!("{name}.weight"),
            init_weight(rng, &[out_ch, in_ch / groups, kernel, kernel]),
        )?;
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros([out_ch]))?);
        Ok(Conv2d { weight, bias, stride, padding, groups })
    }

    pub fn forward<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let w = store.tracked(tape, self.weight);
        let b = self.bias.map(|id| store.tracked(tape, id));
        tape.conv2d(x, w, b, self.stride, self.padding, self.groups)
    }
}

/// Fully connected layer over token matrices.
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init<E: Float>(
        store: &mut ParamStore<E>,
        rng: &mut Rng,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init_weight(rng, &[out_features, in_features]))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_features]))?;
        Ok(Linear { weight, bias })
    }

    pub fn forward<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let w = store.tracked(tape, self.weight);
        let b = store.tracked(tape, self.bias);
        tape.linear(x, w, Some(b))
    }
}

/// Layer norm over the feature axis of `[N, C]` tokens.
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn init<E: Float>(store: &mut ParamStore<E>, name: &str, ch: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.weight"), Tensor::full([ch], E::ONE))?;
        let beta = store.add(format!("{name}.bias"), Tensor::zeros([ch]))?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn forward<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let g = store.tracked(tape, self.gamma);
        let b = store.tracked(tape, self.beta);
        tape.layer_norm_tokens(x, g, b)
    }
}

/// Group norm over `CxHxW` maps.
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn init<E: Float>(
        store: &mut ParamStore<E>,
        name: &str,
        ch: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || !ch.is_multiple_of(groups) {
            return Err(Error::config(format!(
                "{name}: group norm groups={groups} must divide channels={ch}"
            )));
        }
        let gamma = store.add(format!("{name}.weight"), Tensor::full([ch], E::ONE))?;
        let beta = store.add(format!("{name}.bias"), Tensor::zeros([ch]))?;
        Ok(GroupNorm { gamma, beta, groups })
    }

    pub fn forward<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let g = store.tracked(tape, self.gamma);
        let b = store.tracked(tape, self.beta);
        tape.group_norm_chw(x, self.groups, g, b)
    }
}

/// Group-norm channel count for a given width: 32 when divisible, else the
/// largest divisor not exceeding 32.
pub fn norm_groups(ch: usize) -> usize {
    let mut g = 32.min(ch);
    while !ch.is_multiple_of(g) {
        g -= 1;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("a.weight", Tensor::zeros([2])).unwrap();
        assert!(store.add("a.weight", Tensor::zeros([2])).is_err());
    }

    #[test]
    fn grads_zero_after_reset() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", Tensor::from_vec([2], vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let v = store.tracked(&mut tape, id);
        let loss = tape.sum_all(v);
        let grads = tape.backward(loss).unwrap();
        store.accumulate(&grads);
        assert_eq!(store.get(id).grad.data(), &[1.0, 1.0]);
        store.zero_grads();
        assert_eq!(store.get(id).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn gradient_shape_tracks_value_shape() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::zeros([3, 4])).unwrap();
        assert_eq!(store.get(id).grad.shape().dims(), &[3, 4]);
    }

    #[test]
    fn norm_groups_divides() {
        for ch in [1, 2, 5, 16, 30, 32, 48, 64, 120, 128, 320] {
            let g = norm_groups(ch);
            assert!(g >= 1 && ch % g == 0 && g <= 32);
        }
    }
}
