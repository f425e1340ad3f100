//! Command-line surface of the sketch classification pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! `TREMORSKETCH_SEED` overrides the config seed for config-driven commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tremorsketch::augment::{expand_dataset, write_augmented, AugmentError};
use tremorsketch::data::{
    generate_synthetic_dataset, ingest_dataset, load_config, load_eval_split, load_gray_split,
    prepare_training_data, preprocess_bytes, write_dataset_tree, ConfigError, DataError,
    DatasetManifest, DrawingType, PipelineConfig, SplitKind,
};
use tremorsketch::eval::{
    classification_metrics, confusion_matrix, pooled_report, predict_set, vote_and_report,
    BranchPredictions, EnsembleReport, EvalError, EvaluationReport,
};
use tremorsketch::imageproc::encode_png;
use tremorsketch::nn::{build_model, Model, ModelConfig, NnError};
use tremorsketch::plot::{line_chart, Series};
use tremorsketch::train::{
    history_csv, load_checkpoint, save_checkpoint, train_model, CheckpointError, Sample,
    TrainError,
};

const USAGE: u8 = 1;
const DATA: u8 = 2;
const NUMERIC: u8 = 3;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match &e {
            DataError::Train(t) => classify_train_error(t, e.to_string()),
            _ => CliError::new(DATA, e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(DATA, e.to_string())
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        CliError::new(DATA, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::new(DATA, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::new(DATA, e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        CliError::new(DATA, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(DATA, e.to_string())
    }
}

fn classify_train_error(e: &TrainError, message: String) -> CliError {
    let code = match e {
        TrainError::DivergedLoss { .. }
        | TrainError::NonFiniteGradient { .. }
        | TrainError::NotDistribution { .. }
        | TrainError::LossShapeMismatch { .. }
        | TrainError::OptimizerShapeMismatch { .. }
        | TrainError::Tensor(_) => NUMERIC,
        _ => DATA,
    };
    CliError::new(code, message)
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let message = e.to_string();
        classify_train_error(&e, message)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TypeArg {
    Spiral,
    Wave,
}

impl From<TypeArg> for DrawingType {
    fn from(t: TypeArg) -> Self {
        match t {
            TypeArg::Spiral => DrawingType::Spiral,
            TypeArg::Wave => DrawingType::Wave,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Pooled,
    Paired,
}

#[derive(Parser)]
#[command(
    name = "tremorsketch",
    version,
    about = "Spiral/wave sketch classification: preprocessing, augmentation, training, evaluation, ensembling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Binarize and resize a dataset tree into a new directory.
    Preprocess {
        #[arg(long)]
        root: PathBuf,
        #[arg(long = "type", value_enum)]
        drawing_type: TypeArg,
        #[arg(long, default_value_t = 224)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand the training split with affine augmentation; writes PNGs plus a manifest.
    Augment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        copies: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one branch; writes the best checkpoint, history CSV and SVG curves.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the testing split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long = "type", value_enum)]
        drawing_type: TypeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combine spiral and wave checkpoints by hard voting.
    Ensemble {
        #[arg(long = "spiral-ckpt")]
        spiral_ckpt: PathBuf,
        #[arg(long = "wave-ckpt")]
        wave_ckpt: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_enum, default_value = "pooled")]
        mode: ModeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset tree in the standard layout.
    Synth {
        #[arg(long = "type", value_enum)]
        drawing_type: TypeArg,
        /// Training images per class.
        #[arg(long)]
        n: usize,
        /// Testing images per class (default: n/4, at least 1).
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        amplitude: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprintln!("{e}");
            return ExitCode::from(USAGE);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn load_config_with_env(path: &Path) -> Result<PipelineConfig, CliError> {
    let mut cfg = load_config(path)?;
    if let Ok(raw) = std::env::var("TREMORSKETCH_SEED") {
        let seed: u64 = raw.trim().parse().map_err(|_| {
            CliError::new(
                USAGE,
                format!("TREMORSKETCH_SEED must be an unsigned integer, got '{raw}'"),
            )
        })?;
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Preprocess {
            root,
            drawing_type,
            size,
            out,
        } => preprocess(&root, drawing_type.into(), size, &out),
        Command::Augment { config, copies, out } => augment(&config, copies, &out),
        Command::Train { config, out } => train(&config, &out),
        Command::Evaluate {
            checkpoint,
            root,
            drawing_type,
            out,
        } => evaluate(&checkpoint, &root, drawing_type.into(), out.as_deref()),
        Command::Ensemble {
            spiral_ckpt,
            wave_ckpt,
            root,
            mode,
            out,
        } => ensemble(&spiral_ckpt, &wave_ckpt, &root, mode, out.as_deref()),
        Command::Synth {
            drawing_type,
            n,
            test,
            amplitude,
            seed,
            size,
            out,
        } => synth(drawing_type.into(), n, test, amplitude, seed, size, &out),
    }
}

fn preprocess(
    root: &Path,
    drawing_type: DrawingType,
    size: usize,
    out: &Path,
) -> Result<(), CliError> {
    let (train, test) = ingest_dataset(root, drawing_type)?;
    let mut written = 0usize;
    for manifest in [&train, &test] {
        for item in &manifest.items {
            let bytes = fs::read(&item.path)?;
            let gray = preprocess_bytes(&bytes, size).map_err(|source| {
                DataError::UnreadableImage {
                    path: item.path.clone(),
                    source,
                }
            })?;
            let class_dir = tremorsketch::data::CLASS_DIRS[item.label];
            let dir = out
                .join(drawing_type.dir_name())
                .join(manifest.split.dir_name())
                .join(class_dir);
            fs::create_dir_all(&dir)?;
            let name = item
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("img_{:04}", item.subject_index));
            fs::write(dir.join(format!("{name}.png")), encode_png(&gray))?;
            written += 1;
        }
    }
    println!(
        "preprocessed {written} images ({} train, {} test) at {size}x{size} -> {}",
        train.items.len(),
        test.items.len(),
        out.display()
    );
    Ok(())
}

fn augment(config: &Path, copies: Option<usize>, out: &Path) -> Result<(), CliError> {
    let cfg = load_config_with_env(config)?;
    let copies = copies.unwrap_or(cfg.copies_per_image);
    let (train_manifest, _) = ingest_dataset(&cfg.dataset_root, cfg.drawing_type)?;
    let grays = load_gray_split(&train_manifest, cfg.image_size)?;
    let expanded = expand_dataset(&grays, &cfg.augment, copies, cfg.seed)?;
    write_augmented(&expanded, out)?;

    // Per-class counts before and after expansion.
    let mut csv = String::from("class,original,augmented\n");
    for label in 0..2usize {
        let before = grays.iter().filter(|(_, l)| *l == label).count();
        let after = expanded.iter().filter(|item| item.label == label).count();
        csv.push_str(&format!("{label},{before},{after}\n"));
    }
    fs::write(out.join("distribution.csv"), csv)?;

    println!(
        "augmented {} originals x (1 + {copies}) -> {} images in {}",
        grays.len(),
        expanded.len(),
        out.display()
    );
    Ok(())
}

fn train(config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = load_config_with_env(config)?;
    let (train_manifest, _) = ingest_dataset(&cfg.dataset_root, cfg.drawing_type)?;
    let data = prepare_training_data(
        &train_manifest,
        cfg.image_size,
        &cfg.augment,
        cfg.copies_per_image,
        cfg.train.validation_fraction,
        cfg.seed,
    )?;

    let mut model_cfg = ModelConfig::preset(&cfg.model_preset)?;
    model_cfg.input_size = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model: Model<f32> = build_model(&model_cfg, &mut rng)?;

    fs::create_dir_all(out)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_path = Some(out.join("model.ckpt"));

    println!(
        "training {} ({}): {} train / {} val samples, {} epochs, lr {}",
        cfg.drawing_type,
        cfg.model_preset,
        data.train.len(),
        data.val.len(),
        train_cfg.epochs,
        train_cfg.learning_rate
    );
    let (ckpt, history) = train_model(&mut model, &data.train, &data.val, &train_cfg)?;
    save_checkpoint(&ckpt, &out.join("model.ckpt"))?;
    fs::write(out.join("history.csv"), history_csv(&history))?;

    let col = |f: fn(&tremorsketch::train::EpochStats) -> f64| -> Vec<f64> {
        history.iter().map(f).collect()
    };
    let train_loss = col(|h| h.train_loss);
    let val_loss = col(|h| h.val_loss);
    let train_acc = col(|h| h.train_acc);
    let val_acc = col(|h| h.val_acc);
    fs::write(
        out.join("loss.svg"),
        line_chart(
            "loss",
            &[
                Series { name: "train", values: &train_loss },
                Series { name: "validation", values: &val_loss },
            ],
            640,
            360,
        ),
    )?;
    fs::write(
        out.join("accuracy.svg"),
        line_chart(
            "accuracy",
            &[
                Series { name: "train", values: &train_acc },
                Series { name: "validation", values: &val_acc },
            ],
            640,
            360,
        ),
    )?;
    println!(
        "best checkpoint: epoch {} (val loss {:.6}) -> {}",
        ckpt.epoch,
        ckpt.best_val_loss,
        out.join("model.ckpt").display()
    );
    Ok(())
}

fn load_test_samples(
    root: &Path,
    drawing_type: DrawingType,
    input_size: usize,
) -> Result<(DatasetManifest, Vec<Sample>), CliError> {
    let (_, test_manifest) = ingest_dataset(root, drawing_type)?;
    let samples = load_eval_split(&test_manifest, input_size)?;
    Ok((test_manifest, samples))
}

fn evaluate(
    checkpoint: &Path,
    root: &Path,
    drawing_type: DrawingType,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.into_model()?;
    let (_, samples) = load_test_samples(root, drawing_type, model.config().input_size)?;
    let preds = predict_set(&model, &samples)?;
    let truths: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let report = classification_metrics(&confusion_matrix(
        &truths,
        &preds.labels,
        model.config().num_classes,
    )?)?;
    let title = format!("{drawing_type} test evaluation");
    print!("{}", report.to_text(&title));
    if let Some(dir) = out {
        write_report(dir, drawing_type.dir_name(), &report)?;
    }
    Ok(())
}

fn write_report(dir: &Path, name: &str, report: &EvaluationReport) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{name}_report.txt")), report.to_text(name))?;
    fs::write(
        dir.join(format!("{name}_report.kv")),
        report.to_key_values(&format!("{name}.")),
    )?;
    fs::write(
        dir.join(format!("{name}_confusion.pgm")),
        report.confusion.to_pgm(48),
    )?;
    Ok(())
}

fn ensemble(
    spiral_ckpt: &Path,
    wave_ckpt: &Path,
    root: &Path,
    mode: ModeArg,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let spiral_model = load_checkpoint(spiral_ckpt)?.into_model()?;
    let wave_model = load_checkpoint(wave_ckpt)?.into_model()?;
    let (_, spiral_samples) =
        load_test_samples(root, DrawingType::Spiral, spiral_model.config().input_size)?;
    let (_, wave_samples) =
        load_test_samples(root, DrawingType::Wave, wave_model.config().input_size)?;

    let spiral_preds = predict_set(&spiral_model, &spiral_samples)?;
    let wave_preds = predict_set(&wave_model, &wave_samples)?;
    let spiral_truths: Vec<usize> = spiral_samples.iter().map(|s| s.label).collect();
    let wave_truths: Vec<usize> = wave_samples.iter().map(|s| s.label).collect();

    let (mode_name, report) = match mode {
        ModeArg::Pooled => (
            "pooled",
            pooled_report(&spiral_preds, &wave_preds, &spiral_truths, &wave_truths)?,
        ),
        ModeArg::Paired => (
            "paired",
            paired_by_class_rank(
                &spiral_preds,
                &wave_preds,
                &spiral_truths,
                &wave_truths,
            )?,
        ),
    };
    print!("{}", report.spiral.to_text("spiral branch"));
    print!("{}", report.wave.to_text("wave branch"));
    print!("{}", report.ensemble.to_text(&format!("ensemble ({mode_name})")));
    if let Some(dir) = out {
        write_report(dir, "spiral", &report.spiral)?;
        write_report(dir, "wave", &report.wave)?;
        write_report(dir, "ensemble", &report.ensemble)?;
    }
    Ok(())
}

/// Pair the two test sets by (class, per-class rank); both branches must hold
/// the same per-class counts.
fn paired_by_class_rank(
    spiral_preds: &BranchPredictions,
    wave_preds: &BranchPredictions,
    spiral_truths: &[usize],
    wave_truths: &[usize],
) -> Result<EnsembleReport, CliError> {
    if spiral_truths != wave_truths {
        return Err(EvalError::MissingPairing {
            detail: format!(
                "per-class test counts differ between branches (spiral {} vs wave {} samples)",
                spiral_truths.len(),
                wave_truths.len()
            ),
        }
        .into());
    }
    Ok(vote_and_report(
        spiral_preds,
        wave_preds,
        spiral_truths,
        wave_truths,
    )?)
}

fn synth(
    drawing_type: DrawingType,
    n: usize,
    test: Option<usize>,
    amplitude: f64,
    seed: u64,
    size: usize,
    out: &Path,
) -> Result<(), CliError> {
    let n_test = test.unwrap_or_else(|| (n / 4).max(1));
    let train_items = generate_synthetic_dataset(n, drawing_type, amplitude, seed, size)?;
    let test_items = generate_synthetic_dataset(
        n_test,
        drawing_type,
        amplitude,
        seed.wrapping_add(0x5EED_7E57),
        size,
    )?;
    write_dataset_tree(out, drawing_type, SplitKind::Training, &train_items)?;
    write_dataset_tree(out, drawing_type, SplitKind::Testing, &test_items)?;
    println!(
        "wrote {} train + {} test synthetic {} images ({}x{}) under {}",
        train_items.len(),
        test_items.len(),
        drawing_type,
        size,
        size,
        out.display()
    );
    Ok(())
}
