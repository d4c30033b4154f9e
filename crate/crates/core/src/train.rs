//! Training loop: shuffle, augment, two-round forward, composite loss, Adam
//! with cosine decay, periodic validation, best-checkpoint selection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{self, CheckpointMeta};
use crate::data::augment::augment;
use crate::data::tiling::SampleTile;
use crate::error::{Error, Result};
use crate::feedback::FeedbackMode;
use crate::loss::{round_loss, total_loss, LossConfig};
use crate::metrics::{argmax_channels, ConfusionMatrix};
use crate::model::FeedbackFormer;
use crate::optim::{cosine_lr, Adam};
use crate::tensor::rng::Rng;
use crate::tensor::tape::{Gradients, Tape};
use crate::tensor::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
    /// Validate every this many epochs (and always on the final epoch).
    pub eval_every: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 4,
            lr0: 0.001,
            seed: 0,
            eval_every: 5,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be at least 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1".to_string()));
        }
        if self.lr0.is_nan() || self.lr0 <= 0.0 {
            return Err(Error::config(format!("train.lr0 must be positive, got {}", self.lr0)));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every must be at least 1".to_string()));
        }
        self.loss.validate()
    }
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Step { epoch: usize, step: usize, loss: f64, lr: f64 },
    Val { epoch: usize, miou: f64 },
    Best { epoch: usize, miou: f64 },
}

#[derive(Debug)]
pub struct FitOutcome {
    pub best_epoch: usize,
    pub best_miou: f64,
    /// Mean training loss of the first and last epochs.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub log: Vec<LogRecord>,
}

/// Train in place, keeping the checkpoint with the best validation mean IoU.
pub fn fit<E: Float>(
    model: &mut FeedbackFormer<E>,
    train_tiles: &[SampleTile],
    val_tiles: &[SampleTile],
    cfg: &TrainConfig,
    out_dir: &Path,
    config_digest: u64,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train_tiles.is_empty() || val_tiles.is_empty() {
        return Err(Error::data("fit: training and validation splits must be non-empty".to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let checkpoint_path = out_dir.join("best.ckpt");

    let mut adam = Adam::new(&model.store);
    let mut order_rng = Rng::new(cfg.seed).stream(&[0x6f72_6465]);
    let base_rng = Rng::new(cfg.seed);
    let two_round = model.cfg.feedback.mode != FeedbackMode::None;

    let mut log = Vec::new();
    let mut best_miou = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;

    let mut emit = |rec: LogRecord, log: &mut Vec<LogRecord>| -> Result<()> {
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::internal(format!("log serialization failed: {e}")))?;
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log.push(rec);
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
        let mut order: Vec<usize> = (0..train_tiles.len()).collect();
        order_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // Each sample runs on its own tape; gradients merge in sample
            // order, so the step is reproducible at any worker count.
            let per_sample: Vec<Result<(Gradients<E>, f64)>> = chunk
                .par_iter()
                .map(|&idx| {
                    let mut aug_rng = base_rng.stream(&[0x0061_7567, epoch as u64, idx as u64]);
                    let tile = augment(&train_tiles[idx], &mut aug_rng)?;
                    let mut tape = Tape::new();
                    let image = tape.constant(tile.image.to_input::<E>());
                    let loss = if two_round {
                        let out = model.forward_two_round(&mut tape, image, true)?;
                        let l1 = round_loss(
                            &mut tape,
                            &cfg.loss,
                            out.round1.logits,
                            out.round1.aux,
                            &tile.label,
                        )?;
                        let l2 = round_loss(
                            &mut tape,
                            &cfg.loss,
                            out.round2.logits,
                            out.round2.aux,
                            &tile.label,
                        )?;
                        total_loss(&mut tape, &cfg.loss, l1, l2)?
                    } else {
                        let out = model.forward_round(&mut tape, image, None, true)?;
                        round_loss(&mut tape, &cfg.loss, out.logits, out.aux, &tile.label)?
                    };
                    let value = tape.value(loss).item().to_f64();
                    Ok((tape.backward(loss)?, value))
                })
                .collect();

            model.store.zero_grads();
            let inv = E::from_f64(1.0 / chunk.len() as f64);
            let mut loss_value = 0.0;
            for result in per_sample {
                let (grads, value) = result?;
                model.store.accumulate_scaled(&grads, inv);
                loss_value += value;
            }
            let loss_value = loss_value / chunk.len() as f64;
            adam.step(&mut model.store, lr)?;

            epoch_loss += loss_value;
            steps += 1;
            emit(LogRecord::Step { epoch, step, loss: loss_value, lr }, &mut log)?;
        }
        let mean_loss = epoch_loss / steps as f64;
        if epoch == 0 {
            initial_loss = mean_loss;
        }
        final_loss = mean_loss;

        let last = epoch + 1 == cfg.epochs;
        if (epoch + 1) % cfg.eval_every == 0 || last {
            let cm = confusion_over(model, val_tiles)?;
            let miou = cm.mean_iou();
            emit(LogRecord::Val { epoch, miou }, &mut log)?;
            if miou > best_miou {
                best_miou = miou;
                best_epoch = epoch;
                let meta = CheckpointMeta {
                    config_digest,
                    epoch: epoch as u32,
                    best_miou: miou,
                    rng_state: order_rng.state(),
                };
                checkpoint::save(&checkpoint_path, &model.store, &meta)?;
                emit(LogRecord::Best { epoch, miou }, &mut log)?;
            }
        }
    }
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;

    Ok(FitOutcome {
        best_epoch,
        best_miou,
        initial_loss,
        final_loss,
        checkpoint_path,
        log_path,
        log,
    })
}

/// Dataset-wide confusion matrix of final-round argmax predictions.
pub fn confusion_over<E: Float>(
    model: &FeedbackFormer<E>,
    tiles: &[SampleTile],
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.cfg.decoder.num_classes);
    for tile in tiles {
        let logits = model.predict(&tile.image.to_input::<E>())?;
        let pred = argmax_channels(&logits);
        cm.update(&tile.label, &pred)?;
    }
    Ok(cm)
}

/// Per-class IoU table in manifest class order.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
    pub pixels: u64,
}

impl EvalReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let width = self.class_names.iter().map(|n| n.len()).max().unwrap_or(5).max(5);
        out.push_str(&format!("{:<width$}  IoU\n", "class", width = width));
        for (name, iou) in self.class_names.iter().zip(&self.per_class) {
            match iou {
                Some(v) => out.push_str(&format!("{name:<width$}  {:.4}\n", v, width = width)),
                None => out.push_str(&format!("{name:<width$}  (absent)\n", width = width)),
            }
        }
        out.push_str(&format!("{:<width$}  {:.4}\n", "mIoU", self.miou, width = width));
        out
    }
}

pub fn evaluate<E: Float>(
    model: &FeedbackFormer<E>,
    tiles: &[SampleTile],
    class_names: &[String],
) -> Result<EvalReport> {
    if class_names.len() != model.cfg.decoder.num_classes {
        return Err(Error::config(format!(
            "evaluate: model has {} classes, dataset manifest lists {}",
            model.cfg.decoder.num_classes,
            class_names.len()
        )));
    }
    let cm = confusion_over(model, tiles)?;
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        per_class: cm.per_class_iou(),
        miou: cm.mean_iou(),
        pixels: cm.total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate, ClassMode, SyntheticCellConfig};
    use crate::data::tiling::SampleTile;
    use crate::encoder::EncoderConfig;
    use crate::feedback::FeedbackMode;
    use crate::model::ModelConfig;

    fn tiny_model(seed: u64, mode: FeedbackMode) -> FeedbackFormer<f32> {
        let encoder = EncoderConfig {
            dims: [4, 4, 8, 8],
            depths: [1, 1, 1, 1],
            heads: [1, 1, 2, 2],
            mlp_ratio: 2,
            strict_input: true,
        };
        let mut cfg = ModelConfig::new(encoder, 2);
        cfg.decoder.channels = 8;
        cfg.feedback.mode = mode;
        FeedbackFormer::new(&cfg, seed).unwrap()
    }

    fn tiny_tiles(n: usize) -> Vec<SampleTile> {
        let dir = std::env::temp_dir().join(format!("ff_train_tiles_{n}"));
        let cfg = SyntheticCellConfig::new(5, 32, n, ClassMode::Two);
        let spec = generate(&cfg, &dir).unwrap();
        spec.load_all()
            .unwrap()
            .iter()
            .map(|s| SampleTile::whole(s).unwrap())
            .collect()
    }

    #[test]
    fn one_epoch_has_ceil_n_over_batch_steps() {
        let tiles = tiny_tiles(8);
        let mut model = tiny_model(1, FeedbackMode::Lite);
        let cfg = TrainConfig { epochs: 1, batch_size: 4, eval_every: 1, ..Default::default() };
        let out_dir = std::env::temp_dir().join("ff_fit_steps");
        let outcome = fit(&mut model, &tiles, &tiles, &cfg, &out_dir, 0).unwrap();
        let steps = outcome
            .log
            .iter()
            .filter(|r| matches!(r, LogRecord::Step { .. }))
            .count();
        assert_eq!(steps, 2);
        assert!(outcome.checkpoint_path.exists());
        assert!(outcome.log_path.exists());
    }

    #[test]
    fn alpha_zero_and_half_diverge_after_first_step() {
        let tiles = tiny_tiles(4);
        let run = |alpha: f64| -> Vec<f32> {
            let mut model = tiny_model(3, FeedbackMode::Lite);
            let mut cfg = TrainConfig {
                epochs: 1,
                batch_size: 4,
                eval_every: 5,
                ..Default::default()
            };
            cfg.loss.alpha = alpha;
            let out_dir = std::env::temp_dir().join(format!("ff_fit_alpha_{alpha}"));
            fit(&mut model, &tiles, &tiles, &cfg, &out_dir, 0).unwrap();
            let id = model.store.id_of("encoder.stage1.embed.weight").unwrap();
            model.store.value(id).data().to_vec()
        };
        let with_first_round = run(0.5);
        let without = run(0.0);
        assert_ne!(with_first_round, without);
    }

    #[test]
    fn training_is_reproducible_per_seed() {
        let tiles = tiny_tiles(4);
        let run = || {
            let mut model = tiny_model(7, FeedbackMode::Lite);
            let cfg = TrainConfig { epochs: 2, batch_size: 2, eval_every: 2, ..Default::default() };
            let out_dir = std::env::temp_dir().join("ff_fit_repro");
            let outcome = fit(&mut model, &tiles, &tiles, &cfg, &out_dir, 0).unwrap();
            (outcome.log, model.predict(&tiles[0].image.to_input::<f32>()).unwrap())
        };
        let (log_a, pred_a) = run();
        let (log_b, pred_b) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(pred_a.data(), pred_b.data());
    }

    #[test]
    fn checkpoint_round_trip_reproduces_evaluation() {
        let tiles = tiny_tiles(4);
        let mut model = tiny_model(9, FeedbackMode::Lite);
        let cfg = TrainConfig { epochs: 1, batch_size: 2, eval_every: 1, ..Default::default() };
        let out_dir = std::env::temp_dir().join("ff_fit_ckpt");
        let outcome = fit(&mut model, &tiles, &tiles, &cfg, &out_dir, 42).unwrap();

        let before = confusion_over(&model, &tiles).unwrap();
        let mut reloaded = tiny_model(1234, FeedbackMode::Lite);
        let meta = checkpoint::load(&outcome.checkpoint_path, &mut reloaded.store).unwrap();
        assert_eq!(meta.config_digest, 42);
        let after = confusion_over(&reloaded, &tiles).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn eval_class_count_mismatch_is_error() {
        let tiles = tiny_tiles(2);
        let model = tiny_model(1, FeedbackMode::None);
        let err = evaluate(&model, &tiles, &["a".to_string()]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
