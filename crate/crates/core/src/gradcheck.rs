//! Central finite-difference verification of tape gradients.
//!
//! For every parameter element the analytic gradient is compared with
//! `(f(x+h) - f(x-h)) / 2h`. The reported figure per element is
//! `|fd - analytic| / max(|fd|, |analytic|, 0.001)`, i.e. a relative error
//! with an absolute floor, so near-zero gradients are checked to an absolute
//! tolerance of `0.001 * threshold`. Run in 64-bit: 32-bit evaluation noise
//! swamps the difference quotient.

use crate::error::Result;
use crate::nn::ParamStore;
use crate::tensor::rng::Rng;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

type StoreLoss<'a> = &'a mut dyn FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>;
type ModelLoss<'a> =
    &'a mut dyn FnMut(&mut Tape<f64>, &crate::model::FeedbackFormer<f64>) -> Result<Var>;

/// Default central-difference step for single-op checks.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Step for the full tiny-model sweep. The composite loss curves steeply
/// through normalization denominators, so at 1e-4 the difference quotient's
/// own truncation error exceeds the 1e-4 acceptance bound; at 1e-5 it sits
/// near 3e-5 while 64-bit roundoff stays below 1e-11 (verified by the
/// quadratic convergence of the quotient toward the analytic value).
pub const TINY_MODEL_STEP: f64 = 1e-5;

/// Relative-error floor; differences below `floor * rel` pass absolutely.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Parameter name and flat element index of the worst error.
    pub worst: String,
    pub elements_checked: usize,
}

impl GradReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err < threshold
    }
}

/// Check every element of every parameter in `store` against central
/// differences of the scalar loss built by `f`.
pub fn check_store(
    store: &mut ParamStore<f64>,
    step: f64,
    mut f: impl FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<GradReport> {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;

    let eval = |store: &ParamStore<f64>, f: StoreLoss<'_>| -> Result<f64> {
        let mut tape = Tape::inference();
        let loss = f(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradReport { max_rel_err: 0.0, worst: String::new(), elements_checked: 0 };
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.value.numel())).collect();
    for (id, name, numel) in ids {
        for i in 0..numel {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + step;
            let plus = eval(store, &mut f)?;
            store.get_mut(id).value.data_mut()[i] = orig - step;
            let minus = eval(store, &mut f)?;
            store.get_mut(id).value.data_mut()[i] = orig;

            let fd = (plus - minus) / (2.0 * step);
            let an = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(REL_FLOOR);
            report.elements_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

/// Check one op: wraps `inputs` as parameters, builds the op with `f`, and
/// reduces its output to a scalar through a fixed random projection so every
/// output element influences the loss.
pub fn check_op(
    inputs: &[Tensor<f64>],
    step: f64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradReport> {
    // Learn the output shape, then freeze a projection for it.
    let mut probe = Tape::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = f(&mut probe, &vars)?;
    let out_shape = probe.value(out).shape().clone();
    let mut rng = Rng::new(0x9e3779b9);
    let proj = Tensor::from_vec(
        out_shape.clone(),
        (0..out_shape.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    );

    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("in{i}"), t.clone()).expect("unique"))
        .collect();

    check_store(&mut store, step, move |tape, store| {
        let vars: Vec<Var> = ids.iter().map(|&id| store.tracked(tape, id)).collect();
        let out = f(tape, &vars)?;
        let p = tape.constant(proj.clone());
        let weighted = tape.mul(out, p)?;
        Ok(tape.sum_all(weighted))
    })
}

/// Tiny full-model configuration used by the gradient-check harness: 8x8
/// inputs (so the strict divisible-by-32 gate is off), scaled dims, and a
/// decoder narrow enough that a full every-parameter sweep stays fast.
pub fn tiny_model_config(mode: crate::feedback::FeedbackMode) -> crate::model::ModelConfig {
    use crate::encoder::EncoderConfig;
    let encoder = EncoderConfig {
        dims: [4, 4, 8, 8],
        depths: [1, 1, 1, 1],
        heads: [1, 1, 2, 2],
        mlp_ratio: 2,
        strict_input: false,
    };
    let mut cfg = crate::model::ModelConfig::new(encoder, 2);
    cfg.decoder.channels = 8;
    cfg.feedback.mode = mode;
    cfg.feedback.attn_downsample = 2;
    cfg
}

/// Check every parameter of a model against central differences of the
/// scalar loss built by `f` (which sees the model read-only).
pub fn check_model(
    model: &mut crate::model::FeedbackFormer<f64>,
    step: f64,
    mut f: impl FnMut(&mut Tape<f64>, &crate::model::FeedbackFormer<f64>) -> Result<Var>,
) -> Result<GradReport> {
    let mut tape = Tape::new();
    let loss = f(&mut tape, model)?;
    let grads = tape.backward(loss)?;

    let eval = |model: &crate::model::FeedbackFormer<f64>, f: ModelLoss<'_>| -> Result<f64> {
        let mut tape = Tape::inference();
        let loss = f(&mut tape, model)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradReport { max_rel_err: 0.0, worst: String::new(), elements_checked: 0 };
    let ids: Vec<_> = model.store.iter().map(|(id, p)| (id, p.name.clone(), p.value.numel())).collect();
    for (id, name, numel) in ids {
        for i in 0..numel {
            let orig = model.store.get(id).value.data()[i];
            model.store.get_mut(id).value.data_mut()[i] = orig + step;
            let plus = eval(model, &mut f)?;
            model.store.get_mut(id).value.data_mut()[i] = orig - step;
            let minus = eval(model, &mut f)?;
            model.store.get_mut(id).value.data_mut()[i] = orig;

            let fd = (plus - minus) / (2.0 * step);
            let an = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(REL_FLOOR);
            report.elements_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

/// Full two-round composite-loss gradient check of the tiny model; the
/// harness behind both the acceptance suite and the `gradcheck` CLI command.
///
/// Every parameter is jittered before the check. At fresh initialization some
/// activations sit exactly on the ReLU kink (a group norm whose group holds a
/// single element outputs exactly its zero-initialized shift), where a
/// subgradient and a central difference legitimately disagree; random offsets
/// move the evaluation point off the kink without changing what is verified.
pub fn check_tiny_model(
    mode: crate::feedback::FeedbackMode,
    seed: u64,
    step: f64,
) -> Result<GradReport> {
    use crate::loss::{round_loss, total_loss, LossConfig};

    let cfg = tiny_model_config(mode);
    let mut model = crate::model::FeedbackFormer::<f64>::new(&cfg, seed)?;
    let mut rng = Rng::new(seed ^ 0x696d67);
    for (_, p) in model.store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.uniform(-0.05, 0.05);
        }
    }
    let image = Tensor::from_vec(
        [3, 8, 8],
        (0..3 * 64).map(|_| rng.uniform(0.0, 1.0)).collect::<Vec<f64>>(),
    );
    let target: Vec<u8> = (0..64).map(|_| rng.below(2) as u8).collect();
    let loss_cfg = LossConfig::default();

    check_model(&mut model, step, move |tape, model| {
        let img = tape.constant(image.clone());
        let out = model.forward_two_round(tape, img, true)?;
        let l1 = round_loss(tape, &loss_cfg, out.round1.logits, out.round1.aux, &target)?;
        let l2 = round_loss(tape, &loss_cfg, out.round2.logits, out.round2.aux, &target)?;
        total_loss(tape, &loss_cfg, l1, l2)
    })
}
