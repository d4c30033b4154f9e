//! Four-stage hierarchical encoder with attention token mixers.
//!
//! Stage 1 embeds the image with a 7x7 stride-4 convolution; each later stage
//! halves the resolution with a 3x3 stride-2 convolution. Every stage runs a
//! string of blocks of the form
//! `x + Attn(LN(x))` then `y + MLP(LN(y))` over flattened spatial tokens.
//! Stage outputs are the feature maps f1..f4 at 1/4, 1/8, 1/16, 1/32 input
//! resolution.

use crate::error::{Error, Result};
use crate::feedback::{inject, Injection};
use crate::nn::{Conv2d, GroupNorm, LayerNorm, Linear, ParamStore};
use crate::tensor::rng::Rng;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Float;

/// Preset sizes; depths follow the S12/S24/S36 convention of 12/24/36 blocks
/// split (n, n, 3n, n) across stages with dims [64, 128, 320, 512].
pub const VARIANT_NAMES: [&str; 3] = ["s12", "s24", "s36"];

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub dims: [usize; 4],
    pub depths: [usize; 4],
    pub heads: [usize; 4],
    pub mlp_ratio: usize,
    /// Require input height/width divisible by 32 (exact pyramid halving).
    /// Disabled only by harnesses that probe tiny ragged inputs.
    pub strict_input: bool,
}

impl EncoderConfig {
    pub fn s12() -> Self {
        EncoderConfig {
            dims: [64, 128, 320, 512],
            depths: [2, 2, 6, 2],
            heads: [1, 2, 5, 8],
            mlp_ratio: 4,
            strict_input: true,
        }
    }

    pub fn s24() -> Self {
        EncoderConfig { depths: [4, 4, 12, 4], ..Self::s12() }
    }

    pub fn s36() -> Self {
        EncoderConfig { depths: [6, 6, 18, 6], ..Self::s12() }
    }

    pub fn from_variant(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "s12" => Ok(Self::s12()),
            "s24" => Ok(Self::s24()),
            "s36" => Ok(Self::s36()),
            other => Err(Error::config(format!(
                "unknown encoder variant {other:?}; valid variants: {}",
                VARIANT_NAMES.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (&d, &h)) in self.dims.iter().zip(&self.heads).enumerate() {
            if d == 0 || h == 0 || d % h != 0 {
                return Err(Error::config(format!(
                    "encoder stage {}: dim {d} must be divisible by heads {h}",
                    i + 1
                )));
            }
        }
        if self.depths.contains(&0) {
            return Err(Error::config("encoder depths must all be positive".to_string()));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::config("encoder mlp_ratio must be positive".to_string()));
        }
        Ok(())
    }

    /// Patch-embedding (kernel, stride, padding) for a stage index.
    pub fn patch_embed(stage: usize) -> (usize, usize, usize) {
        if stage == 0 {
            (7, 4, 2)
        } else {
            (3, 2, 1)
        }
    }
}

pub struct MetaFormerBlock {
    norm1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    heads: usize,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl MetaFormerBlock {
    pub fn init<E: Float>(
        store: &mut ParamStore<E>,
        rng: &mut Rng,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
    ) -> Result<Self> {
        Ok(MetaFormerBlock {
            norm1: LayerNorm::init(store, &format!("{name}.norm1"), dim)?,
            q: Linear::init(store, rng, &format!("{name}.attn.q"), dim, dim)?,
            k: Linear::init(store, rng, &format!("{name}.attn.k"), dim, dim)?,
            v: Linear::init(store, rng, &format!("{name}.attn.v"), dim, dim)?,
            proj: Linear::init(store, rng, &format!("{name}.attn.proj"), dim, dim)?,
            heads,
            norm2: LayerNorm::init(store, &format!("{name}.norm2"), dim)?,
            fc1: Linear::init(store, rng, &format!("{name}.mlp.fc1"), dim, dim * mlp_ratio)?,
            fc2: Linear::init(store, rng, &format!("{name}.mlp.fc2"), dim * mlp_ratio, dim)?,
        })
    }

    /// `x + Attn(LN(x))`, then `y + MLP(LN(y))`, over `[N, C]` tokens.
    pub fn forward<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: Var,
    ) -> Result<Var> {
        let n1 = self.norm1.forward(tape, store, x)?;
        let q = self.q.forward(tape, store, n1)?;
        let k = self.k.forward(tape, store, n1)?;
        let v = self.v.forward(tape, store, n1)?;
        let mixed = tape.attention(q, k, v, self.heads)?;
        let mixed = self.proj.forward(tape, store, mixed)?;
        let y = tape.add(x, mixed)?;

        let n2 = self.norm2.forward(tape, store, y)?;
        let h = self.fc1.forward(tape, store, n2)?;
        let h = tape.gelu(h);
        let h = self.fc2.forward(tape, store, h)?;
        tape.add(y, h)
    }

    /// Token-mixer attention probabilities for a given input, one `[N, N]`
    /// matrix per head. Inspection helper; does not touch any training tape.
    pub fn mixer_probs<E: Float>(
        &self,
        store: &ParamStore<E>,
        x: &crate::tensor::Tensor<E>,
    ) -> Result<Vec<crate::tensor::Tensor<E>>> {
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let n1 = self.norm1.forward(&mut tape, store, xv)?;
        let q = self.q.forward(&mut tape, store, n1)?;
        let k = self.k.forward(&mut tape, store, n1)?;
        crate::tensor::ops::attention_probs(tape.value(q), tape.value(k), self.heads)
    }
}

struct Stage {
    embed: Conv2d,
    blocks: Vec<MetaFormerBlock>,
    out_norm: GroupNorm,
}

/// Stage outputs plus the stage-1 embedding, which is the feedback
/// injection point.
pub struct EncodeOutput {
    /// f1..f4 at 1/4, 1/8, 1/16, 1/32 resolution.
    pub stages: [Var; 4],
    /// Stage-1 features right after patch embedding (and injection, if any),
    /// before the first block.
    pub embedded: Var,
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    stages: Vec<Stage>,
}

impl Encoder {
    pub fn init<E: Float>(
        store: &mut ParamStore<E>,
        rng: &mut Rng,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(4);
        let mut in_ch = 3;
        for si in 0..4 {
            let dim = cfg.dims[si];
            let (k, s, p) = EncoderConfig::patch_embed(si);
            let name = format!("encoder.stage{}", si + 1);
            let embed = Conv2d::init(store, rng, &format!("{name}.embed"), in_ch, dim, k, s, p, 1)?;
            let blocks = (0..cfg.depths[si])
                .map(|bi| {
                    MetaFormerBlock::init(
                        store,
                        rng,
                        &format!("{name}.block{bi}"),
                        dim,
                        cfg.heads[si],
                        cfg.mlp_ratio,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let out_norm = GroupNorm::init(store, &format!("{name}.norm"), dim, 1)?;
            stages.push(Stage { embed, blocks, out_norm });
            in_ch = dim;
        }
        Ok(Encoder { cfg: cfg.clone(), stages })
    }

    /// Run the four stages over a `3xHxW` image already on the tape.
    /// `injection` is added to the stage-1 embedding when present.
    pub fn encode<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        image: Var,
        injection: Option<&Injection>,
    ) -> Result<EncodeOutput> {
        let (c, h, w) = tape.value(image).shape().chw().map_err(|_| {
            Error::data(format!("encoder input must be 3xHxW, got {}", tape.value(image).shape()))
        })?;
        if c != 3 {
            return Err(Error::data(format!("encoder input must have 3 channels, got {c}")));
        }
        if self.cfg.strict_input && (h % 32 != 0 || w % 32 != 0) {
            return Err(Error::data(format!(
                "encoder input {h}x{w} must have height and width divisible by 32"
            )));
        }

        let mut x = image;
        let mut outs = Vec::with_capacity(4);
        let mut embedded = None;
        for (si, stage) in self.stages.iter().enumerate() {
            x = stage.embed.forward(tape, store, x)?;
            if si == 0 {
                if let Some(inj) = injection {
                    x = inject(tape, x, inj)?;
                }
                embedded = Some(x);
            }
            let (_, sh, sw) = tape.value(x).shape().chw()?;
            let mut tokens = tape.tokens_from_chw(x)?;
            for block in &stage.blocks {
                tokens = block.forward(tape, store, tokens)?;
            }
            x = tape.chw_from_tokens(tokens, sh, sw)?;
            x = stage.out_norm.forward(tape, store, x)?;
            outs.push(x);
        }
        Ok(EncodeOutput {
            stages: [outs[0], outs[1], outs[2], outs[3]],
            embedded: embedded.expect("stage 1 always runs"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            dims: [4, 4, 8, 8],
            depths: [1, 1, 1, 1],
            heads: [1, 1, 2, 2],
            mlp_ratio: 2,
            strict_input: true,
        }
    }

    #[test]
    fn unknown_variant_lists_valid_names() {
        let err = EncoderConfig::from_variant("S13").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("s12") && msg.contains("s24") && msg.contains("s36"));
    }

    #[test]
    fn resolution_schedule_divides_by_two_each_stage() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        let enc = Encoder::init(&mut store, &mut rng, &tiny_cfg()).unwrap();
        let mut tape = Tape::inference();
        let img = tape.constant(Tensor::zeros([3, 64, 64]));
        let out = enc.encode(&mut tape, &store, img, None).unwrap();
        let dims: Vec<_> = out.stages.iter().map(|&v| tape.value(v).shape().dims().to_vec()).collect();
        assert_eq!(dims[0], vec![4, 16, 16]);
        assert_eq!(dims[1], vec![4, 8, 8]);
        assert_eq!(dims[2], vec![8, 4, 4]);
        assert_eq!(dims[3], vec![8, 2, 2]);
    }

    #[test]
    fn non_divisible_input_rejected() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        let enc = Encoder::init(&mut store, &mut rng, &tiny_cfg()).unwrap();
        let mut tape = Tape::inference();
        let img = tape.constant(Tensor::zeros([3, 100, 100]));
        let err = match enc.encode(&mut tape, &store, img, None) {
            Err(e) => e,
            Ok(_) => panic!("expected an error"),
        };
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("32"));
    }

    #[test]
    fn heads_must_divide_dims() {
        let mut cfg = tiny_cfg();
        cfg.heads = [3, 1, 1, 1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zeroed_residual_branches_make_block_identity() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(4);
        let block = MetaFormerBlock::init(&mut store, &mut rng, "b", 8, 2, 4).unwrap();
        // Zero every branch output projection: attn proj and mlp fc2.
        for name in ["b.attn.proj.weight", "b.attn.proj.bias", "b.mlp.fc2.weight", "b.mlp.fc2.bias"] {
            let id = store.id_of(name).unwrap();
            let shape = store.value(id).shape().clone();
            store.get_mut(id).value = Tensor::zeros(shape);
        }
        let mut tape = Tape::inference();
        let x = Tensor::from_vec([6, 8], (0..48).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>());
        let xv = tape.constant(x.clone());
        let y = block.forward(&mut tape, &store, xv).unwrap();
        assert!(tape.value(y).max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn mixer_attention_rows_sum_to_one() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(5);
        let block = MetaFormerBlock::init(&mut store, &mut rng, "b", 8, 2, 4).unwrap();
        let x = Tensor::from_vec([5, 8], (0..40).map(|i| (i as f32 * 0.13).cos()).collect::<Vec<_>>());
        for head in block.mixer_probs(&store, &x).unwrap() {
            for row in head.data().chunks_exact(5) {
                let sum: f32 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn s12_names_are_unique_and_enumerable() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(0);
        let _ = Encoder::init(&mut store, &mut rng, &tiny_cfg()).unwrap();
        let names = store.names();
        assert!(names.contains(&"encoder.stage1.block0.attn.q.weight"));
        assert!(names.contains(&"encoder.stage4.norm.bias"));
    }
}
