//! The `bcdunet` command line.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure
//! (diverging loss or a failed gradient check).

pub mod gradcheck;
mod settings;

pub use settings::{parse_config_text, Settings};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    extract_patches, load_image, load_manifest, load_mask, lung_preprocess, resize_image, save_image, save_mask,
    split_by_source, synth_ct_slice, synth_dataset, Image, Mask, MaskPair, ResizeMode, Split, SynthKind,
    clamp_intensity, min_max_normalize,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_set, Averaging, DEFAULT_THRESHOLD};
use crate::model::{Model, ModelConfig, Preset};
use crate::nn::load_checkpoint;
use crate::tensor::{write_bt1_file, Tensor};
use crate::train::{fit, Example, OptimizerKind, TrainConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BCDUNET_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "bcdunet", version, about = "Train and evaluate BCDU-Net segmentation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write the log, best checkpoint and resolved config.
    Train(TrainArgs),
    /// Score a checkpoint: metrics report and ROC file.
    Eval(EvalArgs),
    /// Write probability maps (BT1) and thresholded masks (PGM).
    Predict(PredictArgs),
    /// Finite-difference check of every layer type on tiny inputs.
    Gradcheck(GradcheckArgs),
    /// Build surrounding-tissue masks for lung CT slices.
    PreprocessLung(LungArgs),
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// micro, desk or full
    #[arg(long)]
    preset: Option<String>,
    /// Number of densely connected blocks in the bottleneck.
    #[arg(long = "d", alias = "dense-blocks")]
    dense_blocks: Option<usize>,
    #[arg(long)]
    base_filters: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Square input size of the network.
    #[arg(long)]
    size: Option<usize>,
}

impl ModelArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("preset", self.preset.clone()),
            ("dense_blocks", self.dense_blocks.map(|v| v.to_string())),
            ("base_filters", self.base_filters.map(|v| v.to_string())),
            ("depth", self.depth.map(|v| v.to_string())),
            ("size", self.size.map(|v| v.to_string())),
        ]
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// key=value file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// A manifest path, or synth:discs / synth:vessels.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    min_delta: Option<f64>,
    /// adam or sgd
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Synthetic training images.
    #[arg(long)]
    n_train: Option<usize>,
    /// Synthetic validation images.
    #[arg(long)]
    n_val: Option<usize>,
    /// Validation share of source images when a manifest has no val split.
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Random patches per image when images are larger than the network input.
    #[arg(long)]
    patches_per_image: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides of the architecture stored in the checkpoint.
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: Option<String>,
    /// Manifest split to evaluate.
    #[arg(long)]
    split: Option<String>,
    /// Synthetic image count.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// micro or per-image
    #[arg(long)]
    averaging: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Image files (PGM or BT1).
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    input: Vec<PathBuf>,
    /// Manifest whose images are predicted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the report and resolved config here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LungArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// discs, vessels or ct
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn opt<V: ToString>(v: &Option<V>) -> Option<String> {
    v.as_ref().map(|v| v.to_string())
}

fn path_opt(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

/// Runs the command line; returns the process exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Predict(a) => cmd_predict(a, stdout),
        Command::Gradcheck(a) => cmd_gradcheck(a, stdout),
        Command::PreprocessLung(a) => cmd_preprocess_lung(a, stdout),
        Command::Synth(a) => cmd_synth(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::Numerical(_) => 2,
                _ => 1,
            }
        }
    }
}

fn out_dir(s: &mut Settings, command: &str) -> PathBuf {
    let dir = s.optional("out").map(PathBuf::from).unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .map(|d| PathBuf::from(d).join(command))
            .unwrap_or_else(|| PathBuf::from("runs").join(command))
    });
    s.record("out", dir.display());
    dir
}

fn prepare_out(s: &Settings, dir: &Path, command: &str) -> Result<()> {
    s.finish()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write_text(&dir.join("resolved_config.txt"), &s.resolved_text(command))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Architecture from preset and overrides. `base` replaces the preset when
/// given (the configuration stored in a checkpoint).
fn resolve_model(s: &mut Settings, base: Option<ModelConfig>) -> Result<ModelConfig> {
    let mut mc = match base {
        Some(c) if !s.has("preset") => c,
        _ => {
            let preset: Preset = s.get("preset", "desk".to_string())?.parse()?;
            preset.model_config()
        }
    };
    mc.dense_blocks = s.get("dense_blocks", mc.dense_blocks)?;
    mc.base_filters = s.get("base_filters", mc.base_filters)?;
    mc.depth = s.get("depth", mc.depth)?;
    if s.has("size") {
        let n = s.get("size", mc.input_size.0)?;
        mc.input_size = (n, n);
    } else {
        s.record("size", mc.input_size.0);
    }
    mc.validate()?;
    Ok(mc)
}

enum DataSource {
    Synth(SynthKind),
    Manifest(PathBuf),
}

fn parse_data(raw: &str) -> Result<DataSource> {
    match raw.strip_prefix("synth:") {
        Some(kind) => Ok(DataSource::Synth(kind.parse()?)),
        None => Ok(DataSource::Manifest(PathBuf::from(raw))),
    }
}

fn load_pairs(entries: &[crate::data::ManifestEntry]) -> Result<Vec<MaskPair>> {
    entries
        .iter()
        .map(|e| MaskPair::new(e.id(), load_image(&e.image)?, load_mask(&e.mask)?))
        .collect()
}

fn square_size(mc: &ModelConfig) -> Result<usize> {
    let (h, w) = mc.input_size;
    if h != w {
        return Err(Error::usage("synthetic data needs a square network input"));
    }
    Ok(h)
}

/// Whole images when they already match the network input, random patches
/// otherwise.
fn to_examples(pairs: &[&MaskPair], mc: &ModelConfig, per_image: usize, seed: u64) -> Result<Vec<Example<f32>>> {
    let size = mc.input_size;
    if pairs.iter().all(|p| (p.image.height, p.image.width) == size) {
        return Ok(pairs.iter().map(|p| p.to_example(&p.id)).collect());
    }
    let owned: Vec<MaskPair> = pairs.iter().map(|&p| p.clone()).collect();
    let set = extract_patches(&owned, size, per_image * owned.len(), seed)?;
    Ok(set
        .patches
        .iter()
        .zip(&set.provenance)
        .map(|(p, prov)| p.to_example(&prov.source))
        .collect())
}

fn cmd_train(a: TrainArgs, stdout: &mut dyn Write) -> Result<i32> {
    let mut flags = a.model.flags();
    flags.extend([
        ("data", a.data.clone()),
        ("out", path_opt(&a.out)),
        ("lr", opt(&a.lr)),
        ("batch_size", opt(&a.batch_size)),
        ("epochs", opt(&a.epochs)),
        ("patience", opt(&a.patience)),
        ("min_delta", opt(&a.min_delta)),
        ("optimizer", a.optimizer.clone()),
        ("seed", opt(&a.seed)),
        ("data_seed", opt(&a.data_seed)),
        ("n_train", opt(&a.n_train)),
        ("n_val", opt(&a.n_val)),
        ("val_fraction", opt(&a.val_fraction)),
        ("patches_per_image", opt(&a.patches_per_image)),
    ]);
    let mut s = Settings::new(a.config.as_deref(), flags)?;
    let mut mc = resolve_model(&mut s, None)?;
    let defaults = TrainConfig::default();
    let seed = s.get("seed", 0u64)?;
    mc.seed = seed;
    let optimizer: OptimizerKind = s.get("optimizer", "adam".to_string())?.parse()?;
    let tc = TrainConfig {
        learning_rate: s.get("lr", defaults.learning_rate)?,
        batch_size: s.get("batch_size", defaults.batch_size)?,
        max_epochs: s.get("epochs", defaults.max_epochs)?,
        patience: s.get("patience", defaults.patience)?,
        min_delta: s.get("min_delta", defaults.min_delta)?,
        optimizer,
        seed,
    };
    tc.validate()?;
    let data = s.require("data")?;
    let data_seed = s.get("data_seed", seed)?;
    let (train, val) = match parse_data(&data)? {
        DataSource::Synth(kind) => {
            let n_train = s.get("n_train", 8usize)?;
            let n_val = s.get("n_val", 2usize)?;
            if n_val == 0 {
                return Err(Error::usage("n_val must be at least 1"));
            }
            let pairs = synth_dataset(kind, n_train + n_val, square_size(&mc)?, data_seed)?;
            let (tr, va) = pairs.split_at(n_train);
            (
                tr.iter().map(|p| p.to_example(&p.id)).collect::<Vec<_>>(),
                va.iter().map(|p| p.to_example(&p.id)).collect::<Vec<_>>(),
            )
        }
        DataSource::Manifest(path) => {
            let val_fraction = s.get("val_fraction", 0.1)?;
            let per_image = s.get("patches_per_image", 16usize)?;
            let entries = load_manifest(&path)?;
            let pick = |split| entries.iter().filter(|e| e.split == split).cloned().collect::<Vec<_>>();
            let train_pairs = load_pairs(&pick(Split::Train))?;
            let val_pairs = load_pairs(&pick(Split::Val))?;
            if train_pairs.is_empty() {
                return Err(Error::usage(format!("{} lists no train images", path.display())));
            }
            let (tr, va): (Vec<&MaskPair>, Vec<&MaskPair>) = if val_pairs.is_empty() {
                split_by_source(&train_pairs, |p| &p.id, val_fraction, data_seed)?
            } else {
                (train_pairs.iter().collect(), val_pairs.iter().collect())
            };
            (
                to_examples(&tr, &mc, per_image, data_seed)?,
                to_examples(&va, &mc, per_image, data_seed.wrapping_add(1))?,
            )
        }
    };
    let dir = out_dir(&mut s, "train");
    prepare_out(&s, &dir, "train")?;

    let mut model = Model::<f32>::build(mc.clone())?;
    let _ = writeln!(stdout, "params={}", model.count_params());
    let log = fit(&mut model, &train, &val, &tc)?;
    write_text(&dir.join("trainlog.txt"), &log.to_text())?;
    model.save(&dir.join("best.ckpt"))?;

    let preds: Vec<Tensor<f32>> = train
        .iter()
        .map(|e| {
            let x = Tensor::stack(std::slice::from_ref(&e.input))?;
            model.predict(&x)
        })
        .collect::<Result<_>>()?;
    let targets: Vec<Tensor<f32>> = train
        .iter()
        .map(|e| e.target.clone().reshape(&[1, 1, mc.input_size.0, mc.input_size.1]))
        .collect::<Result<_>>()?;
    let report = evaluate_set(&preds, &targets, DEFAULT_THRESHOLD, Averaging::Micro).ok();

    let mut summary = String::new();
    let _ = writeln!(summary, "params={}", model.count_params());
    let _ = writeln!(summary, "epochs={}", log.stopping_epoch);
    let _ = writeln!(summary, "best_epoch={}", log.best_epoch);
    let _ = writeln!(summary, "best_val_loss={}", log.best_val_loss);
    if let Some(r) = &report {
        let _ = writeln!(summary, "train_f1={}", r.metrics.f1);
    }
    let _ = writeln!(summary, "wall_time_seconds={:.3}", log.wall_time.as_secs_f64());
    write_text(&dir.join("summary.txt"), &summary)?;
    let _ = write!(stdout, "{summary}");
    Ok(0)
}

fn load_model(s: &mut Settings) -> Result<Model<f32>> {
    let path = PathBuf::from(s.require("checkpoint")?);
    let ckpt = load_checkpoint::<f32>(&path)?;
    let stored = ModelConfig::from_kv(&ckpt.metadata)?;
    let mc = resolve_model(s, Some(stored))?;
    let mut model = Model::build(mc)?;
    model.load_weights(&ckpt.store).map_err(|e| match e {
        Error::Dimension(m) => Error::usage(format!("checkpoint does not fit the model: {m}")),
        other => other,
    })?;
    Ok(model)
}

/// Probabilities at the image's own resolution; images of another size are
/// resized to the network input and the result resized back.
fn predict_image(model: &Model<f32>, image: &Image) -> Result<Vec<f64>> {
    let (h, w) = model.config().input_size;
    let native = (image.height, image.width) == (h, w);
    let input = if native {
        image.clone()
    } else {
        resize_image(image, (h, w), ResizeMode::Bilinear)?
    };
    let x = input.to_tensor::<f32>().reshape(&[1, input.channels, h, w])?;
    let probs = model.predict(&x)?.to_f64_vec();
    if native {
        return Ok(probs);
    }
    let back = resize_image(&Image::gray(h, w, probs)?, (image.height, image.width), ResizeMode::Bilinear)?;
    Ok(back.data)
}

fn cmd_eval(a: EvalArgs, stdout: &mut dyn Write) -> Result<i32> {
    let mut flags = a.model.flags();
    flags.extend([
        ("checkpoint", path_opt(&a.checkpoint)),
        ("data", a.data.clone()),
        ("split", a.split.clone()),
        ("n", opt(&a.n)),
        ("data_seed", opt(&a.data_seed)),
        ("threshold", opt(&a.threshold)),
        ("averaging", a.averaging.clone()),
        ("out", path_opt(&a.out)),
    ]);
    let mut s = Settings::new(a.config.as_deref(), flags)?;
    let model = load_model(&mut s)?;
    let threshold = s.get("threshold", DEFAULT_THRESHOLD)?;
    let averaging: Averaging = s.get("averaging", "micro".to_string())?.parse()?;
    let data = s.require("data")?;
    let pairs = match parse_data(&data)? {
        DataSource::Synth(kind) => {
            let n = s.get("n", 8usize)?;
            let seed = s.get("data_seed", 0u64)?;
            synth_dataset(kind, n, square_size(model.config())?, seed)?
        }
        DataSource::Manifest(path) => {
            let split: Split = s.get("split", "test".to_string())?.parse()?;
            let entries: Vec<_> = load_manifest(&path)?
                .into_iter()
                .filter(|e| e.split == split)
                .collect();
            if entries.is_empty() {
                return Err(Error::usage(format!(
                    "{} lists no {split} images",
                    path.display()
                )));
            }
            load_pairs(&entries)?
        }
    };
    let dir = out_dir(&mut s, "eval");
    let mut preds = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let probs = predict_image(&model, &p.image)?;
        preds.push(Tensor::<f64>::from_vec(&[p.mask.height, p.mask.width], probs)?);
        targets.push(p.mask.to_tensor::<f64>().reshape(&[p.mask.height, p.mask.width])?);
    }
    let report = evaluate_set(&preds, &targets, threshold, averaging)?;
    prepare_out(&s, &dir, "eval")?;
    let text = report.to_text();
    write_text(&dir.join("metrics.txt"), &text)?;
    write_text(&dir.join("roc.txt"), &report.roc.to_text())?;
    let _ = write!(stdout, "{text}");
    Ok(0)
}

fn cmd_predict(a: PredictArgs, stdout: &mut dyn Write) -> Result<i32> {
    let inputs = if a.input.is_empty() {
        None
    } else {
        Some(a.input.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","))
    };
    let flags = vec![
        ("checkpoint", path_opt(&a.checkpoint)),
        ("input", inputs),
        ("manifest", path_opt(&a.manifest)),
        ("threshold", opt(&a.threshold)),
        ("out", path_opt(&a.out)),
    ];
    let mut s = Settings::new(a.config.as_deref(), flags)?;
    let model = load_model(&mut s)?;
    let threshold = s.get("threshold", DEFAULT_THRESHOLD)?;
    let mut files: Vec<PathBuf> = s
        .optional("input")
        .map(|v| v.split(',').filter(|p| !p.is_empty()).map(PathBuf::from).collect())
        .unwrap_or_default();
    if let Some(m) = s.optional("manifest") {
        files.extend(load_manifest(Path::new(&m))?.into_iter().map(|e| e.image));
    }
    if files.is_empty() {
        return Err(Error::usage("nothing to predict: give --input or --manifest"));
    }
    let dir = out_dir(&mut s, "predict");
    prepare_out(&s, &dir, "predict")?;
    for file in &files {
        let image = load_image(file)?;
        let probs = predict_image(&model, &image)?;
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        let prob_path = dir.join(format!("{stem}.prob.bt1"));
        let mask_path = dir.join(format!("{stem}.mask.pgm"));
        write_bt1_file(&Tensor::<f64>::from_vec(&[image.height, image.width], probs.clone())?, &prob_path)?;
        save_mask(&mask_path, &Mask::from_probabilities(image.height, image.width, &probs, threshold)?)?;
        let _ = writeln!(stdout, "{} -> {}", file.display(), mask_path.display());
    }
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs, stdout: &mut dyn Write) -> Result<i32> {
    let flags = vec![
        ("tolerance", opt(&a.tolerance)),
        ("epsilon", opt(&a.epsilon)),
        ("seed", opt(&a.seed)),
        ("out", path_opt(&a.out)),
    ];
    let mut s = Settings::new(a.config.as_deref(), flags)?;
    let d = gradcheck::GradcheckConfig::default();
    let config = gradcheck::GradcheckConfig {
        tolerance: s.get("tolerance", d.tolerance)?,
        epsilon: s.get("epsilon", d.epsilon)?,
        seed: s.get("seed", d.seed)?,
        ..d
    };
    if !(config.tolerance > 0.0 && config.epsilon > 0.0) {
        return Err(Error::usage("tolerance and epsilon must be positive"));
    }
    let out = s.optional("out").map(PathBuf::from);
    let report = gradcheck::run_suite(&config)?;
    let text = report.to_text();
    if let Some(dir) = out {
        prepare_out(&s, &dir, "gradcheck")?;
        write_text(&dir.join("gradcheck.txt"), &text)?;
    } else {
        s.finish()?;
    }
    let _ = write!(stdout, "{text}");
    Ok(if report.passed() { 0 } else { 2 })
}

fn cmd_preprocess_lung(a: LungArgs, stdout: &mut dyn Write) -> Result<i32> {
    let flags = vec![("manifest", path_opt(&a.manifest)), ("out", path_opt(&a.out))];
    let mut s = Settings::new(a.config.as_deref(), flags)?;
    let manifest = PathBuf::from(s.require("manifest")?);
    let entries = load_manifest(&manifest)?;
    if entries.is_empty() {
        return Err(Error::usage(format!("{} lists no slices", manifest.display())));
    }
    let dir = out_dir(&mut s, "preprocess-lung");
    prepare_out(&s, &dir, "preprocess-lung")?;
    let mut summary = String::from("# id surrounding_pixels constant_slice\n");
    let mut listing = String::new();
    let mut constant = 0;
    for e in &entries {
        let id = e.id();
        let x = load_image(&e.image)?;
        let gt = load_mask(&e.mask)?;
        let r = lung_preprocess(&x, &gt)?;
        if r.surrounding.data.iter().zip(&gt.data).any(|(&a, &b)| a == 1 && b == 1) {
            return Err(Error::Numerical(format!("{id}: surrounding mask overlaps the lung mask")));
        }
        let (norm, _) = min_max_normalize(&clamp_intensity(&x.data));
        let norm_name = format!("{id}.norm.pgm");
        let mask_name = format!("{id}.surround.pgm");
        save_image(&dir.join(&norm_name), &Image::gray(x.height, x.width, norm)?)?;
        save_mask(&dir.join(&mask_name), &r.surrounding)?;
        constant += usize::from(r.constant_slice);
        let _ = writeln!(summary, "{id} {} {}", r.surrounding.count(), r.constant_slice);
        let _ = writeln!(listing, "{norm_name} {mask_name} {}", e.split);
    }
    let _ = writeln!(summary, "# slices={} constant_slices={constant}", entries.len());
    write_text(&dir.join("summary.txt"), &summary)?;
    write_text(&dir.join("manifest.txt"), &listing)?;
    let _ = write!(stdout, "{summary}");
    Ok(0)
}

fn cmd_synth(a: SynthArgs, stdout: &mut dyn Write) -> Result<i32> {
    let flags = vec![
        ("kind", a.kind.clone()),
        ("n", opt(&a.n)),
        ("n_val", opt(&a.n_val)),
        ("n_test", opt(&a.n_test)),
        ("size", opt(&a.size)),
        ("seed", opt(&a.seed)),
        ("out", path_opt(&a.out)),
    ];
    let mut s = Settings::new(a.config.as_deref(), flags)?;
    let kind = s.get("kind", "discs".to_string())?;
    let n = s.get("n", 8usize)?;
    let n_val = s.get("n_val", 0usize)?;
    let n_test = s.get("n_test", 0usize)?;
    let size = s.get("size", 64usize)?;
    let seed = s.get("seed", 0u64)?;
    let total = n + n_val + n_test;
    if n == 0 {
        return Err(Error::usage("synthetic dataset needs n >= 1"));
    }
    let dir = out_dir(&mut s, "synth");
    let split_of = |i: usize| {
        if i < n {
            Split::Train
        } else if i < n + n_val {
            Split::Val
        } else {
            Split::Test
        }
    };
    let mut listing = String::new();
    if kind == "ct" {
        prepare_out(&s, &dir, "synth")?;
        for i in 0..total {
            let (slice, gt) = synth_ct_slice(size, seed.wrapping_add(i as u64));
            let id = format!("ct{i:03}");
            let t = Tensor::<f64>::from_vec(&[size, size], slice.data)?;
            write_bt1_file(&t, &dir.join(format!("{id}.bt1")))?;
            save_mask(&dir.join(format!("{id}.lung.pgm")), &gt)?;
            let _ = writeln!(listing, "{id}.bt1 {id}.lung.pgm {}", split_of(i));
        }
    } else {
        let kind: SynthKind = kind.parse()?;
        let pairs = synth_dataset(kind, total, size, seed)?;
        prepare_out(&s, &dir, "synth")?;
        for (i, p) in pairs.iter().enumerate() {
            save_image(&dir.join(format!("{}.pgm", p.id)), &p.image)?;
            save_mask(&dir.join(format!("{}.mask.pgm", p.id)), &p.mask)?;
            let _ = writeln!(listing, "{0}.pgm {0}.mask.pgm {1}", p.id, split_of(i));
        }
    }
    write_text(&dir.join("manifest.txt"), &listing)?;
    let _ = writeln!(stdout, "wrote {total} pairs to {}", dir.display());
    Ok(0)
}
