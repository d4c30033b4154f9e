//! Subcommand implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use feedback_former::config::{loss_config, model_config, KvConfig, KNOWN_KEYS};
use feedback_former::data::folds::{build_folds, FoldProtocol};
use feedback_former::data::synth::{generate, ClassMode, SyntheticCellConfig};
use feedback_former::data::tiling::{tile_sample, SampleTile};
use feedback_former::data::DatasetSpec;
use feedback_former::error::{Error, Result};
use feedback_former::gradcheck;
use feedback_former::metrics::argmax_channels;
use feedback_former::model::FeedbackFormer;
use feedback_former::profile::{profile, Convention};
use feedback_former::render::render_predictions;
use feedback_former::train::{evaluate, fit, TrainConfig};
use feedback_former::{checkpoint, feedback};

use crate::manifest::ManifestBuilder;

#[derive(Parser)]
#[command(
    name = "former",
    version,
    about = "Feedback-former segmentation tools: synthesize data, train, evaluate, render, profile, gradient-check"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic cell dataset
    Synth(SynthArgs),
    /// Train a model on a dataset fold
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Render prediction grids for a checkpoint
    Predict(PredictArgs),
    /// Report parameter counts and MACs
    Profile(ProfileArgs),
    /// Finite-difference check of all gradients on a tiny model
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Dataset directory to create
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Square image side in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// 2 (membrane/background) or 5 (full organelle set)
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
}

#[derive(Args)]
pub struct RunArgs {
    /// Flat key = value run configuration
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config file's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoints, logs, and the manifest
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which fold split to evaluate
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of test tiles to render
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct ProfileArgs {
    /// Run configuration; defaults to the stock s12 model when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Square input side (must be divisible by 32)
    #[arg(long, default_value_t = 256)]
    input: usize,
    /// Headline the per-pass parameter count instead of unique parameters
    #[arg(long)]
    per_pass: bool,
    /// Count attention score/aggregate MACs
    #[arg(long)]
    attn_scores: bool,
    /// Count bias MACs
    #[arg(long)]
    bias: bool,
    /// Count normalization MACs
    #[arg(long)]
    norm: bool,
    /// Exclude the training-only auxiliary head
    #[arg(long)]
    no_aux: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Model size preset (only `tiny` is defined)
    #[arg(long, default_value = "tiny")]
    size: String,
    /// Feedback mode to check
    #[arg(long, default_value = "lite")]
    mode: String,
    #[arg(long, default_value_t = feedback_former::gradcheck::TINY_MODEL_STEP)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Synth(args) => synth(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Predict(args) => predict(args),
        Command::Profile(args) => profile_cmd(args),
        Command::Gradcheck(args) => gradcheck_cmd(args),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth(args: SynthArgs) -> Result<()> {
    let mode = match args.classes {
        2 => ClassMode::Two,
        5 => ClassMode::Five,
        n => return Err(Error::config(format!("--classes must be 2 or 5, got {n}"))),
    };
    let mut cfg = SyntheticCellConfig::new(args.seed, args.size, args.count, mode);
    cfg.noise = args.noise;
    ensure_dir(&args.out)?;
    let spec = generate(&cfg, &args.out)?;
    println!(
        "wrote {} images of {}x{} ({} classes) under {}",
        spec.stems.len(),
        args.size,
        args.size,
        spec.class_count,
        args.out.display()
    );
    let mut manifest = ManifestBuilder::new("synth", 0, args.seed);
    manifest.artifact(&DatasetSpec::manifest_path(&args.out));
    manifest.emit(Some(&args.out))
}

/// Fold split of a dataset resolved from config keys.
struct Prepared {
    spec: DatasetSpec,
    train: Vec<SampleTile>,
    val: Vec<SampleTile>,
    test: Vec<SampleTile>,
}

fn prepare_data(kv: &KvConfig, seed: u64) -> Result<Prepared> {
    let root = kv
        .get("data.root")
        .ok_or_else(|| Error::config("config key data.root is required".to_string()))?;
    let spec = DatasetSpec::load(Path::new(root))?;
    let samples = spec.load_all()?;

    let tile = kv.usize_or("data.tile", 0)?;
    let mut tiles = Vec::new();
    for sample in &samples {
        if tile == 0 {
            tiles.push(SampleTile::whole(sample)?);
        } else {
            tiles.extend(tile_sample(sample, tile)?);
        }
    }

    let protocol = FoldProtocol::parse(kv.str_or("data.protocol", "drosophila-5fold"))?;
    let fold_idx = kv.usize_or("data.fold", 0)?;
    if fold_idx >= protocol.fold_count() {
        return Err(Error::config(format!(
            "data.fold = {fold_idx} out of range for {} folds",
            protocol.fold_count()
        )));
    }
    let ids: Vec<(String, String)> =
        tiles.iter().map(|t| (t.id(), t.source.clone())).collect();
    let plan = build_folds(&ids, protocol, seed)?;
    let fold = &plan.folds[fold_idx];

    let by_id: std::collections::HashMap<String, &SampleTile> =
        tiles.iter().map(|t| (t.id(), t)).collect();
    let resolve = |ids: &[String]| -> Vec<SampleTile> {
        ids.iter().map(|id| (*by_id.get(id).expect("fold ids come from tiles")).clone()).collect()
    };
    Ok(Prepared {
        train: resolve(&fold.train),
        val: resolve(&fold.val),
        test: resolve(&fold.test),
        spec,
    })
}

fn load_run_config(path: &Path, seed_flag: Option<u64>) -> Result<(KvConfig, u64)> {
    let kv = KvConfig::from_file(path)?;
    kv.check_known_keys(&KNOWN_KEYS)?;
    let seed = match seed_flag {
        Some(s) => s,
        None => kv.u64_or("seed", 0)?,
    };
    Ok((kv, seed))
}

/// Model config with the class count reconciled against the dataset.
fn model_for_dataset(kv: &KvConfig, spec: &DatasetSpec) -> Result<feedback_former::model::ModelConfig> {
    let mut mcfg = model_config(kv)?;
    match kv.get("model.num_classes") {
        Some(_) if mcfg.decoder.num_classes != spec.class_count => {
            return Err(Error::config(format!(
                "model.num_classes = {} but dataset has {} classes",
                mcfg.decoder.num_classes, spec.class_count
            )));
        }
        Some(_) => {}
        None => mcfg.decoder.num_classes = spec.class_count,
    }
    Ok(mcfg)
}

fn train_config(kv: &KvConfig, seed: u64) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: kv.usize_or("train.epochs", defaults.epochs)?,
        batch_size: kv.usize_or("train.batch_size", defaults.batch_size)?,
        lr0: kv.f64_or("train.lr0", defaults.lr0)?,
        seed,
        eval_every: kv.usize_or("train.eval_every", defaults.eval_every)?,
        loss: loss_config(kv)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: RunArgs) -> Result<()> {
    let (kv, seed) = load_run_config(&args.config, args.seed)?;
    let data = prepare_data(&kv, seed)?;
    let mcfg = model_for_dataset(&kv, &data.spec)?;
    let tcfg = train_config(&kv, seed)?;
    ensure_dir(&args.out)?;

    let mut manifest = ManifestBuilder::new("train", kv.digest(), seed);
    let mut model = FeedbackFormer::<f32>::new(&mcfg, seed)?;
    println!(
        "training {} parameters, {} train / {} val tiles, {} epochs",
        model.store.num_elements(),
        data.train.len(),
        data.val.len(),
        tcfg.epochs
    );
    let outcome = fit(&mut model, &data.train, &data.val, &tcfg, &args.out, kv.digest())?;
    println!(
        "best val mIoU {:.4} at epoch {}; loss {:.4} -> {:.4}; checkpoint {}",
        outcome.best_miou,
        outcome.best_epoch,
        outcome.initial_loss,
        outcome.final_loss,
        outcome.checkpoint_path.display()
    );
    manifest.artifact(&outcome.checkpoint_path);
    manifest.artifact(&outcome.log_path);
    manifest.emit(Some(&args.out))
}

fn load_checkpoint_model(
    kv: &KvConfig,
    spec: &DatasetSpec,
    ckpt: &Path,
    seed: u64,
) -> Result<FeedbackFormer<f32>> {
    let mcfg = model_for_dataset(kv, spec)?;
    let mut model = FeedbackFormer::<f32>::new(&mcfg, seed)?;
    let meta = checkpoint::load(ckpt, &mut model.store)?;
    if meta.config_digest != kv.digest() {
        return Err(Error::config(format!(
            "checkpoint {} was written under config digest {:016x}, current config digests to {:016x}",
            ckpt.display(),
            meta.config_digest,
            kv.digest()
        )));
    }
    Ok(model)
}

fn eval(args: EvalArgs) -> Result<()> {
    let (kv, seed) = load_run_config(&args.config, args.seed)?;
    let data = prepare_data(&kv, seed)?;
    let model = load_checkpoint_model(&kv, &data.spec, &args.checkpoint, seed)?;
    let tiles = match args.split.as_str() {
        "train" => &data.train,
        "val" => &data.val,
        "test" => &data.test,
        other => {
            return Err(Error::config(format!(
                "unknown split {other:?}; expected train, val, or test"
            )))
        }
    };
    let report = evaluate(&model, tiles, &data.spec.class_names)?;
    print!("{}", report.render());

    let mut manifest = ManifestBuilder::new("eval", kv.digest(), seed);
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let path = out.join("eval_report.txt");
        std::fs::write(&path, report.render()).map_err(|e| Error::io(&path, e))?;
        manifest.artifact(&path);
    }
    manifest.emit(args.out.as_deref())
}

fn predict(args: PredictArgs) -> Result<()> {
    let (kv, seed) = load_run_config(&args.config, args.seed)?;
    let data = prepare_data(&kv, seed)?;
    let model = load_checkpoint_model(&kv, &data.spec, &args.checkpoint, seed)?;
    let tiles: Vec<_> = data.test.iter().take(args.count.max(1)).collect();
    if tiles.is_empty() {
        return Err(Error::data("predict: test split is empty".to_string()));
    }

    let mut images = Vec::new();
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for tile in &tiles {
        let logits = model.predict(&tile.image.to_input::<f32>())?;
        preds.push(argmax_channels(&logits));
        images.push(tile.image.clone());
        gts.push(tile.label.clone());
    }
    ensure_dir(&args.out)?;
    let grid = args.out.join("predictions.png");
    let set_name = model.cfg.feedback.mode.name().to_string();
    render_predictions(&grid, &images, &gts, &[(set_name, preds)], &data.spec.palette)?;
    println!("wrote {}", grid.display());

    let mut manifest = ManifestBuilder::new("predict", kv.digest(), seed);
    manifest.artifact(&grid);
    manifest.emit(Some(&args.out))
}

fn profile_cmd(args: ProfileArgs) -> Result<()> {
    let (kv, seed) = match &args.config {
        Some(path) => load_run_config(path, args.seed)?,
        None => (KvConfig::new(), args.seed.unwrap_or(0)),
    };
    let mcfg = model_config(&kv)?;
    let convention = Convention {
        per_pass_params: args.per_pass,
        include_bias: args.bias,
        include_norm: args.norm,
        include_attn_scores: args.attn_scores,
        include_aux: !args.no_aux,
    };
    let report = profile(&mcfg, args.input, args.input, convention)?;
    print!("{}", report.render());

    let mut manifest = ManifestBuilder::new("profile", kv.digest(), seed);
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let txt = out.join("profile.txt");
        std::fs::write(&txt, report.render()).map_err(|e| Error::io(&txt, e))?;
        let csv = out.join("profile.csv");
        std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
        manifest.artifact(&txt);
        manifest.artifact(&csv);
    }
    manifest.emit(args.out.as_deref())
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<()> {
    if args.size != "tiny" {
        return Err(Error::config(format!(
            "unknown gradcheck size {:?}; defined sizes: tiny",
            args.size
        )));
    }
    let mode = feedback::FeedbackMode::parse(&args.mode)?;
    let report = gradcheck::check_tiny_model(mode, args.seed, args.step)?;
    println!(
        "gradcheck {} mode={} elements={} max rel err {:.3e} at {}",
        args.size,
        mode.name(),
        report.elements_checked,
        report.max_rel_err,
        report.worst
    );
    let manifest = ManifestBuilder::new("gradcheck", 0, args.seed);
    manifest.emit(args.out.as_deref())?;
    if !report.passes(args.threshold) {
        return Err(Error::internal(format!(
            "gradient check failed: max rel err {:.3e} >= {:.1e}",
            report.max_rel_err, args.threshold
        )));
    }
    Ok(())
}
