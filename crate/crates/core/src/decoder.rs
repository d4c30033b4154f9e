//! Semantic FPN decoder and the auxiliary FCN head.
//!
//! Encoder maps f1..f4 are projected to a common width with 1x1 laterals,
//! merged top-down (nearest-neighbor upsampling + add), smoothed with a 3x3
//! conv per level, and brought to 1/4 resolution by per-level scale heads
//! (3x3 conv + group norm + ReLU, with 2x bilinear upsampling between
//! blocks). The four aligned maps s1..s4 are summed, classified by a 1x1
//! conv, and bilinearly upsampled to the input resolution.

use crate::encoder::EncodeOutput;
use crate::error::{Error, Result};
use crate::nn::{norm_groups, Conv2d, GroupNorm, ParamStore};
use crate::tensor::rng::Rng;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Width of the pyramid maps s1..s4.
    pub channels: usize,
    pub num_classes: usize,
    /// Disable to ablate the top-down pathway (laterals only).
    pub topdown: bool,
}

impl DecoderConfig {
    pub fn new(num_classes: usize) -> Self {
        DecoderConfig { channels: 128, num_classes, topdown: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("decoder.channels must be positive".to_string()));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "model.num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// The four decoder maps, all `P x H/4 x W/4`.
pub struct PyramidFeatures {
    pub s: [Var; 4],
}

/// Number of scale-head conv blocks per pyramid level (finest first). Level 1
/// needs no upsampling but still gets one block; each extra octave adds one
/// block + 2x upsample.
pub const SCALE_HEAD_BLOCKS: [usize; 4] = [1, 1, 2, 3];

struct ScaleBlock {
    conv: Conv2d,
    norm: GroupNorm,
}

pub struct Decoder {
    pub cfg: DecoderConfig,
    laterals: Vec<Conv2d>,
    fpn_convs: Vec<Conv2d>,
    scale_heads: Vec<Vec<ScaleBlock>>,
    classifier: Conv2d,
}

impl Decoder {
    pub fn init<E: Float>(
        store: &mut ParamStore<E>,
        rng: &mut Rng,
        cfg: &DecoderConfig,
        encoder_dims: [usize; 4],
    ) -> Result<Self> {
        cfg.validate()?;
        let ch = cfg.channels;
        let mut laterals = Vec::with_capacity(4);
        let mut fpn_convs = Vec::with_capacity(4);
        let mut scale_heads = Vec::with_capacity(4);
        for (i, &dim) in encoder_dims.iter().enumerate() {
            let level = i + 1;
            laterals.push(Conv2d::init(store, rng, &format!("decoder.lateral{level}"), dim, ch, 1, 1, 0, 1)?);
            fpn_convs.push(Conv2d::init(store, rng, &format!("decoder.fpn{level}"), ch, ch, 3, 1, 1, 1)?);
            let blocks = (0..SCALE_HEAD_BLOCKS[i])
                .map(|b| {
                    Ok(ScaleBlock {
                        conv: Conv2d::init(
                            store,
                            rng,
                            &format!("decoder.head{level}.block{b}.conv"),
                            ch,
                            ch,
                            3,
                            1,
                            1,
                            1,
                        )?,
                        norm: GroupNorm::init(
                            store,
                            &format!("decoder.head{level}.block{b}.norm"),
                            ch,
                            norm_groups(ch),
                        )?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            scale_heads.push(blocks);
        }
        let classifier =
            Conv2d::init(store, rng, "decoder.classifier", ch, cfg.num_classes, 1, 1, 0, 1)?;
        Ok(Decoder { cfg: cfg.clone(), laterals, fpn_convs, scale_heads, classifier })
    }

    /// Align f1..f4 into the four `P x H/4 x W/4` maps.
    pub fn pyramid<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        feats: &EncodeOutput,
    ) -> Result<PyramidFeatures> {
        let mut lat = Vec::with_capacity(4);
        for (i, &f) in feats.stages.iter().enumerate() {
            lat.push(self.laterals[i].forward(tape, store, f)?);
        }

        let mut merged = lat.clone();
        if self.cfg.topdown {
            for i in (0..3).rev() {
                let (_, th, tw) = tape.value(merged[i]).shape().chw()?;
                let up = tape.resize_nearest(merged[i + 1], th, tw)?;
                merged[i] = tape.add(merged[i], up)?;
            }
        }

        let (_, target_h, target_w) = tape.value(merged[0]).shape().chw()?;
        let mut aligned = Vec::with_capacity(4);
        for (i, &m) in merged.iter().enumerate() {
            let mut x = self.fpn_convs[i].forward(tape, store, m)?;
            for block in &self.scale_heads[i] {
                x = block.conv.forward(tape, store, x)?;
                x = block.norm.forward(tape, store, x)?;
                x = tape.relu(x);
                let (_, h, w) = tape.value(x).shape().chw()?;
                if (h, w) != (target_h, target_w) {
                    x = tape.resize_bilinear(x, (2 * h).min(target_h), (2 * w).min(target_w))?;
                }
            }
            let (_, h, w) = tape.value(x).shape().chw()?;
            if (h, w) != (target_h, target_w) {
                x = tape.resize_bilinear(x, target_h, target_w)?;
            }
            aligned.push(x);
        }

        for &s in &aligned {
            let got = tape.value(s).shape();
            if got.dims() != [self.cfg.channels, target_h, target_w] {
                return Err(Error::internal(format!(
                    "pyramid level shape {got} does not match {}x{target_h}x{target_w}",
                    self.cfg.channels
                )));
            }
        }
        Ok(PyramidFeatures { s: [aligned[0], aligned[1], aligned[2], aligned[3]] })
    }

    /// Sum the pyramid, classify with a 1x1 conv, and upsample to the input
    /// resolution. Returns raw logits; softmax is up to the caller.
    pub fn merge_predict<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        pyramid: &PyramidFeatures,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var> {
        let mut sum = pyramid.s[0];
        for &s in &pyramid.s[1..] {
            sum = tape.add(sum, s)?;
        }
        let logits = self.classifier.forward(tape, store, sum)?;
        tape.resize_bilinear(logits, out_h, out_w)
    }
}

/// Training-only FCN head on stage-3 features: 3x3 conv + norm + ReLU, then a
/// 1x1 classifier, upsampled to the input resolution. Exactly two convolution
/// layers. Not evaluated at inference.
pub struct AuxHead {
    conv1: Conv2d,
    norm: GroupNorm,
    conv2: Conv2d,
}

impl AuxHead {
    pub fn init<E: Float>(
        store: &mut ParamStore<E>,
        rng: &mut Rng,
        in_ch: usize,
        channels: usize,
        num_classes: usize,
    ) -> Result<Self> {
        Ok(AuxHead {
            conv1: Conv2d::init(store, rng, "aux.conv1", in_ch, channels, 3, 1, 1, 1)?,
            norm: GroupNorm::init(store, "aux.norm", channels, norm_groups(channels))?,
            conv2: Conv2d::init(store, rng, "aux.conv2", channels, num_classes, 1, 1, 0, 1)?,
        })
    }

    pub fn forward<E: Float>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        f3: Var,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var> {
        let x = self.conv1.forward(tape, store, f3)?;
        let x = self.norm.forward(tape, store, x)?;
        let x = tape.relu(x);
        let logits = self.conv2.forward(tape, store, x)?;
        tape.resize_bilinear(logits, out_h, out_w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderConfig};
    use crate::tensor::Tensor;

    fn tiny() -> (ParamStore<f32>, Encoder, Decoder, AuxHead) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        let ecfg = EncoderConfig {
            dims: [4, 4, 8, 8],
            depths: [1, 1, 1, 1],
            heads: [1, 1, 2, 2],
            mlp_ratio: 2,
            strict_input: true,
        };
        let enc = Encoder::init(&mut store, &mut rng, &ecfg).unwrap();
        let dcfg = DecoderConfig { channels: 8, num_classes: 2, topdown: true };
        let dec = Decoder::init(&mut store, &mut rng, &dcfg, ecfg.dims).unwrap();
        let aux = AuxHead::init(&mut store, &mut rng, ecfg.dims[2], dcfg.channels, 2).unwrap();
        (store, enc, dec, aux)
    }

    #[test]
    fn pyramid_levels_share_quarter_resolution_shape() {
        let (store, enc, dec, _) = tiny();
        let mut tape = Tape::inference();
        let img = tape.constant(Tensor::zeros([3, 64, 64]));
        let feats = enc.encode(&mut tape, &store, img, None).unwrap();
        let p = dec.pyramid(&mut tape, &store, &feats).unwrap();
        for &s in &p.s {
            assert_eq!(tape.value(s).shape().dims(), &[8, 16, 16]);
        }
    }

    #[test]
    fn logits_match_input_resolution_and_class_count() {
        let (store, enc, dec, aux) = tiny();
        let mut tape = Tape::inference();
        let img = tape.constant(Tensor::zeros([3, 64, 64]));
        let feats = enc.encode(&mut tape, &store, img, None).unwrap();
        let p = dec.pyramid(&mut tape, &store, &feats).unwrap();
        let logits = dec.merge_predict(&mut tape, &store, &p, 64, 64).unwrap();
        assert_eq!(tape.value(logits).shape().dims(), &[2, 64, 64]);
        let aux_logits = aux.forward(&mut tape, &store, feats.stages[2], 64, 64).unwrap();
        assert_eq!(tape.value(aux_logits).shape().dims(), &[2, 64, 64]);
    }

    #[test]
    fn aux_head_has_exactly_two_conv_layers() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(1);
        let _ = AuxHead::init(&mut store, &mut rng, 320, 128, 5).unwrap();
        let convs: Vec<_> = store
            .names()
            .into_iter()
            .filter(|n| n.starts_with("aux.conv") && n.ends_with(".weight"))
            .collect();
        assert_eq!(convs.len(), 2);
    }

    #[test]
    fn num_classes_below_two_rejected() {
        let cfg = DecoderConfig { channels: 8, num_classes: 1, topdown: true };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn topdown_ablation_keeps_shapes_and_changes_values() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        let ecfg = EncoderConfig {
            dims: [4, 4, 8, 8],
            depths: [1, 1, 1, 1],
            heads: [1, 1, 2, 2],
            mlp_ratio: 2,
            strict_input: true,
        };
        let enc = Encoder::init(&mut store, &mut rng, &ecfg).unwrap();
        let with = Decoder::init(
            &mut store,
            &mut rng,
            &DecoderConfig { channels: 8, num_classes: 2, topdown: true },
            ecfg.dims,
        )
        .unwrap();
        // Same weights, pathway disabled.
        let without = Decoder { cfg: DecoderConfig { topdown: false, ..with.cfg.clone() }, ..with };

        let mut tape = Tape::inference();
        let img = tape.constant(Tensor::from_vec(
            [3, 64, 64],
            (0..3 * 64 * 64).map(|i| ((i * 37) % 255) as f32 / 255.0).collect::<Vec<_>>(),
        ));
        let feats = enc.encode(&mut tape, &store, img, None).unwrap();
        let pa = without.pyramid(&mut tape, &store, &feats).unwrap();
        let feats2 = enc.encode(&mut tape, &store, img, None).unwrap();
        let pb = Decoder { cfg: DecoderConfig { topdown: true, ..without.cfg.clone() }, ..without }
            .pyramid(&mut tape, &store, &feats2)
            .unwrap();
        for (&a, &b) in pa.s.iter().zip(&pb.s) {
            assert_eq!(tape.value(a).shape().dims(), &[8, 16, 16]);
            assert_eq!(tape.value(b).shape().dims(), &[8, 16, 16]);
        }
        // The finest level only sees coarser features through the pathway.
        assert!(tape.value(pa.s[0]).max_abs_diff(tape.value(pb.s[0])) > 1e-9);
    }

    #[test]
    fn upsample_counts_are_forced_by_resolution_ratios() {
        // Level i sits at H/2^(i+2); reaching H/4 takes exactly i doublings,
        // and the head gives every level max(1, i) conv blocks.
        for (i, &blocks) in SCALE_HEAD_BLOCKS.iter().enumerate() {
            let ratio = (1usize << (i + 2)) / 4;
            let upsamples = ratio.ilog2() as usize;
            assert_eq!(upsamples, i);
            assert_eq!(blocks, i.max(1));
        }
    }

    #[test]
    fn sum_merge_is_permutation_invariant() {
        let (store, enc, dec, _) = tiny();
        let mut tape = Tape::inference();
        let img = tape.constant(Tensor::from_vec(
            [3, 64, 64],
            (0..3 * 64 * 64).map(|i| (i % 7) as f32 * 0.1).collect::<Vec<_>>(),
        ));
        let feats = enc.encode(&mut tape, &store, img, None).unwrap();
        let p = dec.pyramid(&mut tape, &store, &feats).unwrap();
        let a = dec.merge_predict(&mut tape, &store, &p, 64, 64).unwrap();
        let shuffled = PyramidFeatures { s: [p.s[3], p.s[1], p.s[0], p.s[2]] };
        let b = dec.merge_predict(&mut tape, &store, &shuffled, 64, 64).unwrap();
        assert!(tape.value(a).max_abs_diff(tape.value(b)) < 1e-5);
    }
}
