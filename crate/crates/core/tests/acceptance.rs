//! Acceptance suite. Each test prints one PASS line; a failed assertion
//! prints the criterion and the measured value instead.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use feedback_former::data::augment::{augment, AugmentChoice};
use feedback_former::data::synth::{generate, ClassMode, SyntheticCellConfig};
use feedback_former::data::tiling::{stitch_tiles, tile_sample, SampleTile};
use feedback_former::data::folds::{build_folds, FoldProtocol};
use feedback_former::encoder::EncoderConfig;
use feedback_former::feedback::FeedbackMode;
use feedback_former::gradcheck;
use feedback_former::loss::{iou_loss, round_loss, total_loss, LossConfig};
use feedback_former::metrics::{argmax_channels, ConfusionMatrix};
use feedback_former::model::{FeedbackFormer, ModelConfig};
use feedback_former::optim::cosine_lr;
use feedback_former::profile::{profile, Convention};
use feedback_former::tensor::rng::Rng;
use feedback_former::tensor::tape::Tape;
use feedback_former::tensor::Tensor;
use feedback_former::train::{confusion_over, fit, TrainConfig};
use feedback_former::{checkpoint, checkpoint::CheckpointMeta};

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

fn random_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = Rng::new(seed);
    Tensor::from_vec([3, h, w], (0..3 * h * w).map(|_| rng.uniform(0.0, 1.0) as f32).collect())
}

/// A1: finite-difference gradients, primitives and the tiny full model.
#[test]
fn a1_gradient_suite() {
    use feedback_former::gradcheck::{check_op, DEFAULT_STEP, TINY_MODEL_STEP};

    let mut rng = Rng::new(0xA1);
    let mut rand = |shape: &[usize], lo: f64, hi: f64| -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect())
    };

    // One spot check per primitive family; the exhaustive per-op sweep lives
    // in tests/gradients.rs and runs in the same workspace invocation.
    let conv_in = [rand(&[2, 6, 6], -1.0, 1.0), rand(&[4, 1, 3, 3], -1.0, 1.0), rand(&[4], -0.5, 0.5)];
    let r = check_op(&conv_in, DEFAULT_STEP, |t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, 1, 2)).unwrap();
    assert!(r.passes(1e-4), "A1 FAIL conv2d: {}", r.max_rel_err);

    let attn_in = [rand(&[5, 8], -1.0, 1.0), rand(&[5, 8], -1.0, 1.0), rand(&[5, 8], -1.0, 1.0)];
    let r = check_op(&attn_in, DEFAULT_STEP, |t, v| t.attention(v[0], v[1], v[2], 4)).unwrap();
    assert!(r.passes(1e-4), "A1 FAIL attention: {}", r.max_rel_err);

    let norm_in = [rand(&[6, 2, 2], -1.0, 1.0), rand(&[6], 0.5, 1.5), rand(&[6], -0.5, 0.5)];
    let r = check_op(&norm_in, DEFAULT_STEP, |t, v| t.group_norm_chw(v[0], 2, v[1], v[2])).unwrap();
    assert!(r.passes(1e-4), "A1 FAIL group_norm: {}", r.max_rel_err);

    let rs_in = [rand(&[2, 3, 3], -1.0, 1.0)];
    let r = check_op(&rs_in, DEFAULT_STEP, |t, v| t.resize_bilinear(v[0], 5, 7)).unwrap();
    assert!(r.passes(1e-4), "A1 FAIL resize: {}", r.max_rel_err);

    // Full tiny model, every parameter, both the proposed module and one
    // attention baseline.
    let lite = gradcheck::check_tiny_model(FeedbackMode::Lite, 0, TINY_MODEL_STEP).unwrap();
    assert!(lite.passes(1e-4), "A1 FAIL tiny model (lite): {} at {}", lite.max_rel_err, lite.worst);
    let st = gradcheck::check_tiny_model(FeedbackMode::AttnSt, 0, TINY_MODEL_STEP).unwrap();
    assert!(st.passes(1e-4), "A1 FAIL tiny model (attn_st): {} at {}", st.max_rel_err, st.worst);

    println!(
        "[A1] PASS gradient suite: tiny-model max rel err {:.2e} (lite, {} params) / {:.2e} (attn_st)",
        lite.max_rel_err, lite.elements_checked, st.max_rel_err
    );
}

/// A2: pyramid and logit shapes at 64x64 and 256x256.
#[test]
fn a2_shape_suite() {
    for (size, classes) in [(64usize, 2usize), (256, 5)] {
        let mut cfg = ModelConfig::new(EncoderConfig::s12(), classes);
        cfg.feedback.mode = FeedbackMode::Lite;
        let model = FeedbackFormer::<f32>::new(&cfg, 3).unwrap();
        let mut tape = Tape::inference();
        let img = tape.constant(random_image(size as u64, size, size));
        let out = model.forward_two_round(&mut tape, img, true).unwrap();
        // Encoder stages at H/4 .. H/32 with the configured widths.
        for (i, (&f, &dim)) in out.round2.encoded.stages.iter().zip(&cfg.encoder.dims).enumerate()
        {
            let dims = tape.value(f).shape().dims().to_vec();
            let side = size >> (i + 2);
            assert_eq!(dims, vec![dim, side, side], "A2 FAIL: f{} at input {size}", i + 1);
        }
        for (i, &s) in out.round2.pyramid.s.iter().enumerate() {
            let dims = tape.value(s).shape().dims().to_vec();
            assert_eq!(
                dims,
                vec![128, size / 4, size / 4],
                "A2 FAIL: s{} at input {size} has shape {dims:?}",
                i + 1
            );
        }
        for logits in [out.round1.logits, out.round2.logits] {
            let dims = tape.value(logits).shape().dims().to_vec();
            assert_eq!(dims, vec![classes, size, size], "A2 FAIL: logits {dims:?} at {size}");
        }
        let aux = out.round2.aux.expect("training pass evaluates the aux head");
        assert_eq!(
            tape.value(aux).shape().dims(),
            &[classes, size, size],
            "A2 FAIL: aux logits at {size}"
        );
        let state = out.state.unwrap();
        assert_eq!(state.round1_concat.shape().dims(), &[256, size / 4, size / 4]);
        assert!(tape.value(out.round2.logits).all_finite(), "A2 FAIL: non-finite logits");
    }
    println!("[A2] PASS shape suite: s1..s4 = 128 x H/4 x W/4 and logits = C x H x W at 64 and 256");
}

/// A3: zero-gated feedback keeps round two identical to round one.
#[test]
fn a3_feedback_neutrality() {
    for mode in [FeedbackMode::Lite, FeedbackMode::AttnSelf, FeedbackMode::AttnSt] {
        let encoder = EncoderConfig {
            dims: [8, 8, 16, 16],
            depths: [1, 1, 2, 1],
            heads: [1, 1, 2, 2],
            mlp_ratio: 4,
            strict_input: true,
        };
        let mut cfg = ModelConfig::new(encoder, 3);
        cfg.decoder.channels = 16;
        cfg.feedback.mode = mode;
        let mut model = FeedbackFormer::<f32>::new(&cfg, 11).unwrap();

        let gate = match mode {
            FeedbackMode::Lite => "feedback.lite.beta",
            _ => "feedback.attn.gamma",
        };
        let id = model.store.id_of(gate).unwrap();
        model.store.get_mut(id).value = Tensor::scalar(0.0);

        let mut tape = Tape::inference();
        let img = tape.constant(random_image(17, 64, 64));
        let out = model.forward_two_round(&mut tape, img, false).unwrap();
        let l1 = tape.value(out.round1.logits);
        let l2 = tape.value(out.round2.logits);
        let diff = l1.max_abs_diff(l2);
        assert!(diff < 1e-6, "A3 FAIL {}: logits diverge by {diff}", mode.name());
        assert_eq!(
            argmax_channels(l1),
            argmax_channels(l2),
            "A3 FAIL {}: argmax maps differ",
            mode.name()
        );
    }
    println!("[A3] PASS feedback neutrality: zero gate gives identical rounds for lite/attn_self/attn_st");
}

/// A4: loss composition arithmetic and the two-round gradient path.
#[test]
fn a4_loss_arithmetic() {
    let cfg = LossConfig::default();
    assert_eq!((cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.alpha), (0.7, 0.3, 0.4, 0.5));

    // Known-value head: zero logits on 2 classes give CE = ln 2 exactly and
    // a soft IoU computable by hand (uniform probabilities).
    let target = vec![0u8, 0, 0, 1];
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(Tensor::zeros([2, 2, 2]));
    let total = round_loss(&mut tape, &cfg, logits, Some(logits), &target).unwrap();
    let ce = (2.0f64).ln();
    let iou0 = (0.5 * 3.0 + 1e-6) / (2.0 + 3.0 - 0.5 * 3.0 + 1e-6);
    let iou1 = (0.5 * 1.0 + 1e-6) / (2.0 + 1.0 - 0.5 * 1.0 + 1e-6);
    let head = 0.7 * ce + 0.3 * (1.0 - 0.5 * (iou0 + iou1));
    let expect = head + 0.4 * head;
    let got = tape.value(total).item();
    assert!((got - expect).abs() < 1e-9, "A4 FAIL: round loss {got} vs hand {expect}");

    // alpha weighting is plain arithmetic on the two round losses.
    let l1 = tape.constant(Tensor::scalar(2.0));
    let l2 = tape.constant(Tensor::scalar(1.0));
    let t = total_loss(&mut tape, &cfg, l1, l2).unwrap();
    assert_eq!(tape.value(t).item(), 2.0, "A4 FAIL: 0.5*2+1");
    let zero = LossConfig { alpha: 0.0, ..cfg.clone() };
    let t0 = total_loss(&mut tape, &zero, l1, l2).unwrap();
    assert_eq!(tape.value(t0).item(), 1.0, "A4 FAIL: alpha=0 keeps round two only");

    // Gradients must flow through the round-1 path when alpha > 0: the same
    // model and batch produce different encoder gradients at alpha 0 vs 0.5.
    let grads_for = |alpha: f64| -> Vec<f64> {
        let cfg = gradcheck::tiny_model_config(FeedbackMode::Lite);
        let model = FeedbackFormer::<f64>::new(&cfg, 5).unwrap();
        let mut rng = Rng::new(23);
        let image = Tensor::from_vec(
            [3, 8, 8],
            (0..192).map(|_| rng.uniform(0.0, 1.0)).collect::<Vec<f64>>(),
        );
        let target: Vec<u8> = (0..64).map(|_| rng.below(2) as u8).collect();
        let lcfg = LossConfig { alpha, ..LossConfig::default() };
        let mut tape = Tape::new();
        let img = tape.constant(image);
        let out = model.forward_two_round(&mut tape, img, true).unwrap();
        let l1 = round_loss(&mut tape, &lcfg, out.round1.logits, out.round1.aux, &target).unwrap();
        let l2 = round_loss(&mut tape, &lcfg, out.round2.logits, out.round2.aux, &target).unwrap();
        let loss = total_loss(&mut tape, &lcfg, l1, l2).unwrap();
        let grads = tape.backward(loss).unwrap();
        let id = model.store.id_of("encoder.stage1.embed.weight").unwrap();
        grads.get(id).unwrap().data().to_vec()
    };
    let g_half = grads_for(0.5);
    let g_zero = grads_for(0.0);
    let delta: f64 =
        g_half.iter().zip(&g_zero).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(delta > 1e-12, "A4 FAIL: alpha has no gradient effect ({delta})");

    println!("[A4] PASS loss arithmetic: composition to 1e-9, alpha gates the round-1 gradient path");
}

/// A5: parameter/MAC table for S12/S24/S36 plus the two-round identity.
#[test]
fn a5_size_table() {
    let conv = Convention::default();
    let mut summary = Vec::new();
    for (name, enc, p_t, m_t) in [
        ("S12", EncoderConfig::s12(), 18.13e6, 5.74e9),
        ("S24", EncoderConfig::s24(), 32.32e6, 8.87e9),
        ("S36", EncoderConfig::s36(), 46.48e6, 11.93e9),
    ] {
        let mut cfg = ModelConfig::new(enc, 5);
        cfg.feedback.mode = FeedbackMode::None;
        let r = profile(&cfg, 256, 256, conv).unwrap();
        let p = r.unique_params as f64;
        let m = r.total_macs as f64;
        assert!(within(p, p_t, 0.05), "A5 FAIL {name} params {:.2}M vs {:.2}M", p / 1e6, p_t / 1e6);
        assert!(within(m, m_t, 0.10), "A5 FAIL {name} MACs {:.2}G vs {:.2}G", m / 1e9, m_t / 1e9);
        summary.push(format!("{name} {:.2}M/{:.2}G", p / 1e6, m / 1e9));
    }

    // Two-round totals must equal 2 x single pass + feedback module.
    let mut one = ModelConfig::new(EncoderConfig::s12(), 5);
    one.feedback.mode = FeedbackMode::None;
    let single = profile(&one, 256, 256, conv).unwrap();
    let mut two_cfg = ModelConfig::new(EncoderConfig::s12(), 5);
    two_cfg.feedback.mode = FeedbackMode::Lite;
    let two = profile(&two_cfg, 256, 256, conv).unwrap();
    let module = two.row("feedback.lite").unwrap();
    let expect_macs = 2.0 * single.total_macs as f64 + module.macs as f64;
    let expect_params = 2.0 * single.unique_params as f64 + module.params as f64;
    assert!(
        within(two.total_macs as f64, expect_macs, 0.02),
        "A5 FAIL identity: {:.3}G vs {:.3}G",
        two.total_macs as f64 / 1e9,
        expect_macs / 1e9
    );
    assert!(
        within(two.per_pass_params as f64, expect_params, 0.02),
        "A5 FAIL identity params: {} vs {}",
        two.per_pass_params,
        expect_params
    );
    println!(
        "[A5] PASS size table: {} | two-round {:.2}M/{:.2}G = 2x single + module",
        summary.join(", "),
        two.per_pass_params as f64 / 1e6,
        two.total_macs as f64 / 1e9
    );
}

/// A6: feedback-module table: Lite cost band, ratio to Self, ordering.
#[test]
fn a6_feedback_table() {
    let conv = Convention::default();
    let module_cost = |mode: FeedbackMode| -> (f64, f64) {
        let mut cfg = ModelConfig::new(EncoderConfig::s12(), 5);
        cfg.feedback.mode = mode;
        let r = profile(&cfg, 256, 256, conv).unwrap();
        let row = r
            .rows
            .iter()
            .find(|row| row.name.starts_with("feedback."))
            .expect("feedback row present");
        (row.params as f64, row.macs as f64)
    };
    let (lite_p, lite_m) = module_cost(FeedbackMode::Lite);
    let (st_p, st_m) = module_cost(FeedbackMode::AttnSt);
    let (self_p, self_m) = module_cost(FeedbackMode::AttnSelf);

    assert!(
        (0.015e6..=0.03e6).contains(&lite_p),
        "A6 FAIL: lite params {:.4}M outside [0.015, 0.03]",
        lite_p / 1e6
    );
    assert!(
        (0.07e9..=0.11e9).contains(&lite_m),
        "A6 FAIL: lite MACs {:.4}G outside [0.07, 0.11]",
        lite_m / 1e9
    );
    let ratio = lite_m / self_m;
    assert!((0.30..=0.45).contains(&ratio), "A6 FAIL: lite/self MAC ratio {ratio:.3}");
    assert!(
        lite_m < st_m && st_m < self_m,
        "A6 FAIL ordering: {lite_m} < {st_m} < {self_m}"
    );
    let _ = (st_p, self_p);
    println!(
        "[A6] PASS feedback table: lite {:.3}M/{:.3}G, ratio to self {:.3}, ordering lite < st < self",
        lite_p / 1e6,
        lite_m / 1e9,
        ratio
    );
}

/// A7: desk-scale overfit run on synthetic data, three seeds.
#[test]
fn a7_synthetic_training() {
    let dir = std::env::temp_dir().join("ff_acceptance_a7");
    // Generator difficulty is tuned so the pinned training recipe can clear
    // both bars: large, fat-membraned cells keep the coarse auxiliary head's
    // loss floor low enough for the 0.2x criterion.
    let mut synth = SyntheticCellConfig::new(11, 64, 20, ClassMode::Two);
    synth.membrane_thickness = 4.0;
    synth.noise = 0.005;
    synth.cells_min = 2;
    synth.cells_max = 4;
    let spec = generate(&synth, &dir).unwrap();
    let tiles: Vec<SampleTile> = spec
        .load_all()
        .unwrap()
        .iter()
        .map(|s| SampleTile::whole(s).unwrap())
        .collect();

    let mut lines = Vec::new();
    for seed in [1u64, 2, 3] {
        let encoder = EncoderConfig {
            dims: [16, 32, 48, 64],
            depths: [1, 1, 2, 1],
            heads: [1, 2, 4, 8],
            mlp_ratio: 4,
            strict_input: true,
        };
        let mut mcfg = ModelConfig::new(encoder, 2);
        mcfg.decoder.channels = 48;
        let mut model = FeedbackFormer::<f32>::new(&mcfg, seed).unwrap();
        let tcfg = TrainConfig {
            epochs: 200,
            batch_size: 4,
            lr0: 1e-3,
            seed,
            eval_every: 50,
            loss: LossConfig::default(),
        };
        assert_eq!(cosine_lr(0, tcfg.epochs, tcfg.lr0), 1e-3);
        let out = fit(&mut model, &tiles, &tiles, &tcfg, &dir.join(format!("run{seed}")), 0).unwrap();
        let train_miou = confusion_over(&model, &tiles).unwrap().mean_iou();
        assert!(
            train_miou >= 0.90,
            "A7 FAIL seed {seed}: train mIoU {train_miou:.4} < 0.90"
        );
        assert!(
            out.final_loss < 0.2 * out.initial_loss,
            "A7 FAIL seed {seed}: loss {:.4} -> {:.4} not < 0.2x",
            out.initial_loss,
            out.final_loss
        );
        lines.push(format!("seed {seed}: mIoU {train_miou:.3}, loss x{:.3}", out.final_loss / out.initial_loss));
    }
    println!("[A7] PASS synthetic training: {}", lines.join(" | "));
}

/// A8: confusion-matrix metrics equal a brute-force TP/FP/FN oracle exactly.
#[test]
fn a8_metric_oracle() {
    let classes = 4usize;
    let (h, w) = (17usize, 13usize);
    let mut rng = Rng::new(0xA8);
    let mut cm = ConfusionMatrix::new(classes);
    let mut pairs = Vec::new();
    for _ in 0..100 {
        let gt: Vec<u8> = (0..h * w).map(|_| rng.below(classes) as u8).collect();
        let pred: Vec<u8> = (0..h * w).map(|_| rng.below(classes) as u8).collect();
        cm.update(&gt, &pred).unwrap();
        pairs.push((gt, pred));
    }

    // Oracle: raw pixel triple counts over the whole set.
    let mut tp = vec![0u64; classes];
    let mut fp = vec![0u64; classes];
    let mut fun = vec![0u64; classes];
    for (gt, pred) in &pairs {
        for (&g, &p) in gt.iter().zip(pred) {
            if g == p {
                tp[g as usize] += 1;
            } else {
                fun[g as usize] += 1;
                fp[p as usize] += 1;
            }
        }
    }
    let oracle: Vec<f64> =
        (0..classes).map(|c| tp[c] as f64 / (tp[c] + fp[c] + fun[c]) as f64).collect();
    let got = cm.per_class_iou();
    for c in 0..classes {
        assert_eq!(got[c], Some(oracle[c]), "A8 FAIL class {c}");
    }
    let miou = oracle.iter().sum::<f64>() / classes as f64;
    assert_eq!(cm.mean_iou(), miou, "A8 FAIL mIoU");
    println!("[A8] PASS metric oracle: 100 random mask pairs, exact TP/FP/FN agreement");
}

/// A9: tiling counts, fold sizes, partitions, augmentation histograms,
/// checkpoint round trip.
#[test]
fn a9_protocol_suite() {
    // 20 sources of 1024^2 -> 16 tiles each -> 320; folds 192/64/64.
    let mut rng = Rng::new(0xA9);
    let mut ids = Vec::new();
    for s in 0..20 {
        let sample = feedback_former::data::Sample {
            stem: format!("src{s:02}"),
            image: feedback_former::data::ImageBuf::gray(
                1024,
                1024,
                (0..1024 * 1024).map(|_| rng.below(256) as u8).collect(),
            ),
            label: (0..1024 * 1024).map(|_| rng.below(2) as u8).collect(),
        };
        let tiles = tile_sample(&sample, 256).unwrap();
        assert_eq!(tiles.len(), 16);
        // Stitching back reproduces the source exactly.
        let (img, label) = stitch_tiles(&tiles, 1024, 1024).unwrap();
        assert_eq!(img, sample.image);
        assert_eq!(label, sample.label);
        ids.extend(tiles.iter().map(|t| (t.id(), t.source.clone())));
    }
    assert_eq!(ids.len(), 320, "A9 FAIL: tile count");
    let plan = build_folds(&ids, FoldProtocol::Drosophila5, 7).unwrap();
    for fold in &plan.folds {
        assert_eq!(
            (fold.train.len(), fold.val.len(), fold.test.len()),
            (192, 64, 64),
            "A9 FAIL: fold sizes"
        );
    }

    // ISBI-style: 30 sources of 512^2 -> 120 tiles.
    let isbi_tiles = 30 * (512 / 256) * (512 / 256);
    assert_eq!(isbi_tiles, 120, "A9 FAIL: ISBI tile count");

    // ratio-3fold partitions 1032 ids into thirds with 2:1 train:test.
    let ids: Vec<(String, String)> =
        (0..1032).map(|i| (format!("im{i}"), format!("im{i}"))).collect();
    let plan = build_folds(&ids, FoldProtocol::Ratio3, 3).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for fold in &plan.folds {
        assert_eq!(fold.test.len(), 344);
        assert_eq!(fold.train.len() + fold.val.len(), 688);
        for t in &fold.test {
            assert!(seen.insert(t.clone()), "A9 FAIL: {t} tested twice");
        }
    }
    assert_eq!(seen.len(), 1032, "A9 FAIL: test union incomplete");

    // Augmentation preserves the label histogram.
    let tile = SampleTile {
        source: "t".into(),
        x: 0,
        y: 0,
        size: 32,
        image: feedback_former::data::ImageBuf::gray(
            32,
            32,
            (0..1024).map(|_| rng.below(256) as u8).collect(),
        ),
        label: (0..1024).map(|_| rng.below(5) as u8).collect(),
    };
    let mut hist = [0usize; 5];
    for &v in &tile.label {
        hist[v as usize] += 1;
    }
    let mut aug_rng = Rng::new(99);
    for _ in 0..16 {
        let out = augment(&tile, &mut aug_rng).unwrap();
        let mut h2 = [0usize; 5];
        for &v in &out.label {
            h2[v as usize] += 1;
        }
        assert_eq!(hist, h2, "A9 FAIL: augmentation changed the label histogram");
    }
    let identity = augment_identity_check(&tile);
    assert!(identity, "A9 FAIL: identity augmentation altered the tile");

    // Checkpoint round trip is bit-exact.
    let cfg = gradcheck::tiny_model_config(FeedbackMode::Lite);
    let model = FeedbackFormer::<f32>::new(&cfg, 77).unwrap();
    let img = random_image(5, 8, 8);
    let before = model.predict(&img).unwrap();
    let dir = std::env::temp_dir().join("ff_acceptance_a9");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("rt.ckpt");
    let meta = CheckpointMeta { config_digest: 1, epoch: 3, best_miou: 0.5, rng_state: 9 };
    checkpoint::save(&path, &model.store, &meta).unwrap();
    let mut reloaded = FeedbackFormer::<f32>::new(&cfg, 4242).unwrap();
    checkpoint::load(&path, &mut reloaded.store).unwrap();
    let after = reloaded.predict(&img).unwrap();
    assert_eq!(before.data(), after.data(), "A9 FAIL: checkpoint round trip not bit-exact");

    println!("[A9] PASS protocol suite: 320/120 tiles, 192/64/64 folds, 2:1 thirds, histograms, checkpoints");
}

fn augment_identity_check(tile: &SampleTile) -> bool {
    let out = feedback_former::data::augment::augment_with(tile, AugmentChoice::IDENTITY).unwrap();
    out.image == tile.image && out.label == tile.label
}

/// The soft IoU loss stays within [0, 1] on random inputs (supporting
/// invariant for A4's loss bounds).
#[test]
fn iou_loss_bounds_support() {
    let mut rng = Rng::new(0xB0);
    for _ in 0..10 {
        let c = 2 + rng.below(4);
        let data: Vec<f64> = (0..c * 36).map(|_| rng.uniform(-4.0, 4.0)).collect();
        let target: Vec<u8> = (0..36).map(|_| rng.below(c) as u8).collect();
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::from_vec([c, 6, 6], data));
        let probs = tape.softmax_channels(logits).unwrap();
        let loss = iou_loss(&mut tape, probs, &target).unwrap();
        let v = tape.value(loss).item();
        assert!((0.0..=1.0).contains(&v));
    }
}
