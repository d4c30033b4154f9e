//! The assembled segmentation model and its two-round forward pass.

use crate::decoder::{AuxHead, Decoder, DecoderConfig, PyramidFeatures};
use crate::encoder::{EncodeOutput, Encoder, EncoderConfig};
use crate::error::Result;
use crate::feedback::{FeedbackConfig, FeedbackModule, FeedbackState, Injection};
use crate::nn::ParamStore;
use crate::tensor::rng::Rng;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub feedback: FeedbackConfig,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, num_classes: usize) -> Self {
        ModelConfig {
            encoder,
            decoder: DecoderConfig::new(num_classes),
            feedback: FeedbackConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()
    }
}

/// One encoder+decoder pass.
pub struct RoundOutput {
    pub logits: Var,
    pub aux: Option<Var>,
    pub pyramid: PyramidFeatures,
    pub encoded: EncodeOutput,
}

/// Both rounds of a feedback forward pass. With feedback mode `none` the
/// second round aliases the first.
pub struct TwoRoundOutput<E: Float> {
    pub round1: RoundOutput,
    pub round2: RoundOutput,
    pub state: Option<FeedbackState<E>>,
}

pub struct FeedbackFormer<E: Float> {
    pub cfg: ModelConfig,
    pub store: ParamStore<E>,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub aux: AuxHead,
    pub feedback: FeedbackModule,
}

impl<E: Float> FeedbackFormer<E> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let encoder = Encoder::init(&mut store, &mut rng, &cfg.encoder)?;
        let decoder = Decoder::init(&mut store, &mut rng, &cfg.decoder, cfg.encoder.dims)?;
        let aux = AuxHead::init(
            &mut store,
            &mut rng,
            cfg.encoder.dims[2],
            cfg.decoder.channels,
            cfg.decoder.num_classes,
        )?;
        let feedback = FeedbackModule::init(
            &mut store,
            &mut rng,
            &cfg.feedback,
            cfg.decoder.channels,
            cfg.encoder.dims[0],
        )?;
        Ok(FeedbackFormer { cfg: cfg.clone(), store, encoder, decoder, aux, feedback })
    }

    /// One encoder+decoder round. `with_aux` controls whether the training
    /// head runs; inference never evaluates it.
    pub fn forward_round(
        &self,
        tape: &mut Tape<E>,
        image: Var,
        injection: Option<&Injection>,
        with_aux: bool,
    ) -> Result<RoundOutput> {
        let (_, h, w) = tape.value(image).shape().chw()?;
        let encoded = self.encoder.encode(tape, &self.store, image, injection)?;
        let pyramid = self.decoder.pyramid(tape, &self.store, &encoded)?;
        let logits = self.decoder.merge_predict(tape, &self.store, &pyramid, h, w)?;
        let aux = if with_aux {
            Some(self.aux.forward(tape, &self.store, encoded.stages[2], h, w)?)
        } else {
            None
        };
        Ok(RoundOutput { logits, aux, pyramid, encoded })
    }

    /// Round one with zero injection, feedback transform on concat(s1, s2),
    /// round two over the same weights with the gated injection added to the
    /// stage-1 embedding. Round two's logits are the model output.
    pub fn forward_two_round(
        &self,
        tape: &mut Tape<E>,
        image: Var,
        with_aux: bool,
    ) -> Result<TwoRoundOutput<E>> {
        let round1 = self.forward_round(tape, image, None, with_aux)?;
        let concat = tape.concat_channels(round1.pyramid.s[0], round1.pyramid.s[1])?;
        let injection =
            self.feedback.forward(tape, &self.store, concat, round1.encoded.embedded)?;

        match injection {
            None => {
                // No feedback configured: the single round is the output.
                let round2 = RoundOutput {
                    logits: round1.logits,
                    aux: round1.aux,
                    pyramid: PyramidFeatures { s: round1.pyramid.s },
                    encoded: EncodeOutput {
                        stages: round1.encoded.stages,
                        embedded: round1.encoded.embedded,
                    },
                };
                Ok(TwoRoundOutput { round1, round2, state: None })
            }
            Some(inj) => {
                let state = FeedbackState {
                    round1_concat: tape.value(concat).clone(),
                    injection: scaled_injection(tape, &inj),
                };
                let round2 = self.forward_round(tape, image, Some(&inj), with_aux)?;
                Ok(TwoRoundOutput { round1, round2, state: Some(state) })
            }
        }
    }

    /// Inference: final-round logits as a plain tensor.
    pub fn predict(&self, image: &Tensor<E>) -> Result<Tensor<E>> {
        let mut tape = Tape::inference();
        let img = tape.constant(image.clone());
        let out = self.forward_two_round(&mut tape, img, false)?;
        Ok(tape.value(out.round2.logits).clone())
    }
}

/// The gated map that round two receives, as a plain tensor.
fn scaled_injection<E: Float>(tape: &Tape<E>, inj: &Injection) -> Tensor<E> {
    let scale = tape.value(inj.scale).item();
    tape.value(inj.map).map(|v| v * scale)
}
