//! Feedback modules: the two-round injection machinery.
//!
//! After round one, the two finest decoder maps s1 and s2 (each `P x H/4 x
//! W/4`) are concatenated and transformed into an injection map with the
//! stage-1 channel width. Round two re-runs the same weights with that map,
//! scaled by a learnable gate, added to the stage-1 embedding.
//!
//! The Lite module does the transform with a depthwise 3x3 (residual) and two
//! pointwise convolutions; its gate `beta` starts at 1. The attention
//! baselines project queries/keys/values with 1x1 convolutions at 1/4
//! resolution, attend over an average-pooled grid, and upsample back; their
//! gate `gamma` starts at 0 so training opens the feedback path gradually.

use crate::error::{Error, Result};
use crate::nn::{Conv2d, GroupNorm, ParamStore};
use crate::tensor::rng::Rng;
use crate::tensor::tape::{ParamId, Tape, Var};
use crate::tensor::{Float, Tensor};

/// Which feedback transform runs between the rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    None,
    Lite,
    AttnSelf,
    AttnSt,
}

pub const MODE_NAMES: [&str; 4] = ["none", "lite", "attn_self", "attn_st"];

impl FeedbackMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "none" => Ok(FeedbackMode::None),
            "lite" => Ok(FeedbackMode::Lite),
            "attn_self" => Ok(FeedbackMode::AttnSelf),
            "attn_st" => Ok(FeedbackMode::AttnSt),
            other => Err(Error::config(format!(
                "unknown feedback mode {other:?}; valid modes: {}",
                MODE_NAMES.join(", ")
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeedbackMode::None => "none",
            FeedbackMode::Lite => "lite",
            FeedbackMode::AttnSelf => "attn_self",
            FeedbackMode::AttnSt => "attn_st",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackConfig {
    pub mode: FeedbackMode,
    /// Initial value of the Lite gate (the attention gate always starts at 0).
    pub beta_init: f64,
    /// Side-length divisor for the grid attention is computed on.
    pub attn_downsample: usize,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig { mode: FeedbackMode::Lite, beta_init: 1.0, attn_downsample: 4 }
    }
}

/// An injection map plus its learnable gate, ready to be added to the
/// stage-1 embedding.
pub struct Injection {
    pub map: Var,
    pub scale: Var,
}

/// `e1 + scale * injection`, the round-two entry point.
pub fn inject<E: Float>(tape: &mut Tape<E>, e1: Var, inj: &Injection) -> Result<Var> {
    if tape.value(e1).shape() != tape.value(inj.map).shape() {
        return Err(Error::internal(format!(
            "inject: embedding {} and injection {} shapes differ",
            tape.value(e1).shape(),
            tape.value(inj.map).shape()
        )));
    }
    let scaled = tape.mul(inj.map, inj.scale)?;
    tape.add(e1, scaled)
}

/// State captured from round one, read-only once produced.
pub struct FeedbackState<E: Float> {
    /// concat(s1, s2): `2P x H/4 x W/4`.
    pub round1_concat: Tensor<E>,
    /// The gated injection that round two received.
    pub injection: Tensor<E>,
}

/// Depthwise + pointwise feedback transform.
pub struct LiteFeedback {
    dw: Conv2d,
    dw_norm: GroupNorm,
    pw1: Conv2d,
    pw2: Conv2d,
    pub beta: ParamId,
}

impl LiteFeedback {
    /// `concat_ch = 2 * pyramid channels`, `out_ch` = stage-1 width.
    pub fn init<E: Float>(
        store: &mut ParamStore<E>,
        rng: &mut Rng,
        concat_ch: usize,
        out_ch: usize,
        beta_init: f64,
    ) -> Result<Self> {
        let dw = Conv2d::init(store, rng, "feedback.lite.dw", concat_ch, concat_ch, 3, 1, 1, concat_ch)?;
        let dw_norm = GroupNorm::init(store, "feedback.lite.norm", concat_ch, 1)?;
        let pw1 = Conv2d::init(store, rng, "feedback.lite.pw1", concat_ch, out_ch, 1, 1, 0, 1)?;
        let pw2 = Conv2d::init(store, rng, "feedback.lite.pw2", out_ch, out_ch, 1, 1, 0, 1)?;
        let beta = store.add("feedback.lite.beta", Tensor::scalar(E::from_f64(beta_init)))?;
        Ok(LiteFeedback { dw, dw_norm, pw1, pw2, beta })
    }

    /// `x + GN(DW(x))`, then `pw2(GELU(pw1(.)))` on the concatenated map.
    pub fn forward<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        concat: Var,
    ) -> Result<Injection> {
        let spatial = self.dw.forward(tape, store, concat)?;
        let spatial = self.dw_norm.forward(tape, store, spatial)?;
        let mixed = tape.add(concat, spatial)?;
        let h = self.pw1.forward(tape, store, mixed)?;
        let h = tape.gelu(h);
        let map = self.pw2.forward(tape, store, h)?;
        let scale = store.tracked(tape, self.beta);
        Ok(Injection { map, scale })
    }
}

/// Attention-based feedback baseline. `Self` takes queries from the feedback
/// map itself; `St` (source-target) takes them from the stage-1 embedding.
pub struct FeedbackAttention {
    pub mode: FeedbackMode,
    q: Conv2d,
    k: Conv2d,
    v: Conv2d,
    out: Conv2d,
    pub gamma: ParamId,
    downsample: usize,
}

impl FeedbackAttention {
    pub fn init<E: Float>(
        store: &mut ParamStore<E>,
        rng: &mut Rng,
        mode: FeedbackMode,
        concat_ch: usize,
        target_ch: usize,
        downsample: usize,
    ) -> Result<Self> {
        if !matches!(mode, FeedbackMode::AttnSelf | FeedbackMode::AttnSt) {
            return Err(Error::config(format!(
                "feedback attention requires mode attn_self or attn_st, got {}",
                mode.name()
            )));
        }
        if downsample == 0 {
            return Err(Error::config("feedback.attn_downsample must be positive".to_string()));
        }
        let q_in = match mode {
            FeedbackMode::AttnSelf => concat_ch,
            _ => target_ch,
        };
        let q = Conv2d::init(store, rng, "feedback.attn.q", q_in, target_ch, 1, 1, 0, 1)?;
        let k = Conv2d::init(store, rng, "feedback.attn.k", concat_ch, target_ch, 1, 1, 0, 1)?;
        let v = Conv2d::init(store, rng, "feedback.attn.v", concat_ch, target_ch, 1, 1, 0, 1)?;
        let out = Conv2d::init(store, rng, "feedback.attn.out", target_ch, target_ch, 1, 1, 0, 1)?;
        let gamma = store.add("feedback.attn.gamma", Tensor::scalar(E::ZERO))?;
        Ok(FeedbackAttention { mode, q, k, v, out, gamma, downsample })
    }

    /// `concat` is the 2P-channel round-one map; `e1` the stage-1 embedding
    /// (identical across rounds until injection, so round one's copy is used).
    pub fn forward<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        concat: Var,
        e1: Var,
    ) -> Result<Injection> {
        let (_, h, w) = tape.value(concat).shape().chw()?;
        if h % self.downsample != 0 || w % self.downsample != 0 {
            return Err(Error::config(format!(
                "feedback.attn_downsample={} must divide the s1 grid {h}x{w}",
                self.downsample
            )));
        }
        let q_src = match self.mode {
            FeedbackMode::AttnSelf => concat,
            _ => e1,
        };
        let q = self.q.forward(tape, store, q_src)?;
        let k = self.k.forward(tape, store, concat)?;
        let v = self.v.forward(tape, store, concat)?;

        let (q, k, v) = if self.downsample > 1 {
            (
                tape.avg_pool(q, self.downsample)?,
                tape.avg_pool(k, self.downsample)?,
                tape.avg_pool(v, self.downsample)?,
            )
        } else {
            (q, k, v)
        };
        let (_, ah, aw) = tape.value(q).shape().chw()?;
        let qt = tape.tokens_from_chw(q)?;
        let kt = tape.tokens_from_chw(k)?;
        let vt = tape.tokens_from_chw(v)?;
        let attended = tape.attention(qt, kt, vt, 1)?;
        let attended = tape.chw_from_tokens(attended, ah, aw)?;
        let full = if self.downsample > 1 {
            tape.resize_bilinear(attended, h, w)?
        } else {
            attended
        };
        let map = self.out.forward(tape, store, full)?;
        let scale = store.tracked(tape, self.gamma);
        Ok(Injection { map, scale })
    }
}

/// The configured feedback transform of a model.
pub enum FeedbackModule {
    None,
    Lite(LiteFeedback),
    Attention(FeedbackAttention),
}

impl FeedbackModule {
    pub fn init<E: Float>(
        store: &mut ParamStore<E>,
        rng: &mut Rng,
        cfg: &FeedbackConfig,
        pyramid_ch: usize,
        stage1_ch: usize,
    ) -> Result<Self> {
        match cfg.mode {
            FeedbackMode::None => Ok(FeedbackModule::None),
            FeedbackMode::Lite => Ok(FeedbackModule::Lite(LiteFeedback::init(
                store,
                rng,
                2 * pyramid_ch,
                stage1_ch,
                cfg.beta_init,
            )?)),
            FeedbackMode::AttnSelf | FeedbackMode::AttnSt => {
                Ok(FeedbackModule::Attention(FeedbackAttention::init(
                    store,
                    rng,
                    cfg.mode,
                    2 * pyramid_ch,
                    stage1_ch,
                    cfg.attn_downsample,
                )?))
            }
        }
    }

    pub fn forward<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        concat: Var,
        e1: Var,
    ) -> Result<Option<Injection>> {
        match self {
            FeedbackModule::None => Ok(None),
            FeedbackModule::Lite(m) => Ok(Some(m.forward(tape, store, concat)?)),
            FeedbackModule::Attention(m) => Ok(Some(m.forward(tape, store, concat, e1)?)),
        }
    }
}
