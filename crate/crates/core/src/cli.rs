//! The `xray-vit` command line.
//!
//! Each subcommand validates its flags and config files before doing any
//! work, then hands off to the owning module. Exit codes:
//!
//! - `0` the operation completed,
//! - `1` a runtime failure (the message names the failing path or stage),
//! - `2` a usage error (the message names the offending flag).
//!
//! Every output file is written to a temporary location and renamed into
//! place, so a failed command leaves no partial output behind.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::Error;
use crate::fsutil::write_atomic;
use crate::hpo::{
    results_json, results_text, run_search_on_manifest, sample_trials, DEFAULT_TRIALS,
    DEFAULT_TRIAL_EPOCHS,
};
use crate::image::{encode_pgm, load_image, GrayImage, PreprocessConfig, DEFAULT_TARGET};
use crate::train::{
    build_manifest, evaluate, list_images, load_checkpoint, preprocessing_from_kv,
    train_on_manifest, ClassCounts, ClassDirs, Dataset, DatasetManifest, Split, SplitRequest,
    TrainConfig,
};
use crate::vit::{param_count, shape_table, ViT, ViTConfig};

#[derive(Debug, Parser)]
#[command(
    name = "xray-vit",
    version,
    about = "Vision Transformer toolkit for binary chest X-ray classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enhance (CLAHE, resize) a directory of radiographs and optionally
    /// grow it with seeded augmented copies.
    Preprocess(PreprocessArgs),
    /// Assign images from class directories to train/validation/test.
    Manifest(ManifestArgs),
    /// Train a classifier on a manifest.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Random search over optimizer and learning rate.
    Hpo(HpoArgs),
    /// Print the parameter shape table and count.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Directory of PNG/PGM input images.
    #[arg(long)]
    input: PathBuf,
    /// Output directory. Must not exist or be empty.
    #[arg(long)]
    output: PathBuf,
    /// Preprocessing config (flip_h, flip_v, rotation_limit, fill,
    /// brightness_limit, contrast_limit, clahe, clahe_clip, clahe_tiles,
    /// order, seed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output side length in pixels.
    #[arg(long, default_value_t = DEFAULT_TARGET.0)]
    size: usize,
    /// Append augmented copies until the directory holds this many images.
    #[arg(long)]
    upsample_to: Option<usize>,
    /// Augmentation seed. Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ManifestArgs {
    /// Directory of COVID images.
    #[arg(long)]
    covid: PathBuf,
    /// NON-COVID directory. Repeat for several sources drawn in equal shares.
    #[arg(long = "non-covid", required = true)]
    non_covid: Vec<PathBuf>,
    /// Manifest file to write.
    #[arg(long)]
    output: PathBuf,
    /// `table-one` for the reference per-class counts, or
    /// `TRAIN,VAL,TEST` fractions such as `0.7,0.1,0.2`.
    #[arg(long, default_value = "table-one", value_parser = parse_split_request)]
    split: SplitRequest,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training config (model, optimizer and scheduler keys).
    #[arg(long)]
    config: PathBuf,
    /// Manifest to train on. Overrides the config's `manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Best-validation checkpoint. Overrides the config's `checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory for per-epoch checkpoints.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// JSON-lines training log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overrides the config's `max_epochs`.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the manifest recorded in the checkpoint.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct HpoArgs {
    /// Base training config. Each trial overrides optimizer, lr, seed and
    /// epochs.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    /// Epochs per trial.
    #[arg(long, default_value_t = DEFAULT_TRIAL_EPOCHS)]
    epochs: usize,
    /// Train on a seeded random subset of at most this many images.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ranked results as text.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Ranked results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Model or training config.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_split_request(s: &str) -> Result<SplitRequest, String> {
    if s == "table-one" {
        return Ok(SplitRequest::table_one());
    }
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [train, validation, test] = parts[..] else {
        return Err(format!("expected table-one or three fractions, got {s:?}"));
    };
    Ok(SplitRequest::Fractions {
        train,
        validation,
        test,
    })
}

/// Why a command stopped.
enum Failure {
    Usage(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn usage(flag: &str, what: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{flag}: {what}"))
}

fn runtime(stage: &str, err: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{stage}: {err}"))
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Manifest(a) => manifest(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Hpo(a) => hpo(a),
        Command::Inspect(a) => inspect(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn preprocess(a: PreprocessArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => PreprocessConfig::read(p).map_err(|e| usage("--config", e))?,
        None => PreprocessConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.augment.seed = seed;
    }
    if a.size == 0 {
        return Err(usage("--size", "must be positive"));
    }
    if !a.input.is_dir() {
        return Err(usage(
            "--input",
            format!("{} is not a directory", a.input.display()),
        ));
    }
    if a.output.exists() && !is_empty_dir(&a.output) {
        return Err(usage(
            "--output",
            format!(
                "{} exists and is not an empty directory",
                a.output.display()
            ),
        ));
    }

    let paths = list_images(&a.input).map_err(|e| runtime("listing inputs", e))?;
    let target = a.upsample_to.unwrap_or(paths.len());
    if target < paths.len() {
        return Err(usage(
            "--upsample-to",
            format!("{target} is below the {} input images", paths.len()),
        ));
    }
    let mut stems = std::collections::HashSet::new();
    for p in &paths {
        if !stems.insert(file_stem(p)) {
            return Err(runtime(
                "naming outputs",
                format!("two inputs share the stem of {}", p.display()),
            ));
        }
    }
    let images: Vec<GrayImage> = paths
        .par_iter()
        .map(|p| load_image(p))
        .collect::<crate::Result<_>>()
        .map_err(|e| runtime("decoding", e))?;

    let n = images.len();
    let size = (a.size, a.size);
    let outputs: Vec<(String, GrayImage)> = (0..target)
        .into_par_iter()
        .map(|k| {
            let stem = file_stem(&paths[k % n]);
            if k < n {
                Ok((format!("{stem}.pgm"), cfg.enhance(&images[k], size)?))
            } else {
                let img = cfg.augment_and_enhance(&images[(k - n) % n], k as u64, size)?;
                Ok((format!("{stem}_aug{k:06}.pgm"), img))
            }
        })
        .collect::<crate::Result<_>>()
        .map_err(|e| runtime("preprocessing", e))?;

    let parent = match a.output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent)
        .map_err(|e| runtime("creating output parent", Error::io(&parent, e)))?;
    let staging = tempfile::Builder::new()
        .prefix(".xray-vit-preprocess-")
        .tempdir_in(&parent)
        .map_err(|e| runtime("staging", Error::io(&parent, e)))?;
    for (name, img) in &outputs {
        let path = staging.path().join(name);
        std::fs::write(&path, encode_pgm(img))
            .map_err(|e| runtime("writing", Error::io(&path, e)))?;
    }
    if a.output.exists() {
        std::fs::remove_dir(&a.output)
            .map_err(|e| runtime("replacing output", Error::io(&a.output, e)))?;
    }
    let staged = staging.keep();
    if let Err(e) = std::fs::rename(&staged, &a.output) {
        let _ = std::fs::remove_dir_all(&staged);
        return Err(runtime("publishing output", Error::io(&a.output, e)));
    }
    println!(
        "wrote {} images ({n} enhanced, {} augmented) to {}",
        outputs.len(),
        target - n,
        a.output.display()
    );
    Ok(())
}

fn is_empty_dir(p: &Path) -> bool {
    std::fs::read_dir(p)
        .map(|mut d| d.next().is_none())
        .unwrap_or(false)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn manifest(a: ManifestArgs) -> Outcome {
    for (flag, dir) in
        std::iter::once(("--covid", &a.covid)).chain(a.non_covid.iter().map(|d| ("--non-covid", d)))
    {
        if !dir.is_dir() {
            return Err(usage(flag, format!("{} is not a directory", dir.display())));
        }
    }
    let dirs = ClassDirs {
        covid: a.covid,
        non_covid: a.non_covid,
    };
    let m = build_manifest(&dirs, &a.split, a.seed).map_err(|e| runtime("building manifest", e))?;
    m.write(&a.output)
        .map_err(|e| runtime("writing manifest", e))?;
    println!("{}", counts_table(&m));
    Ok(())
}

fn counts_table(m: &DatasetManifest) -> String {
    let mut lines = vec!["split\tcovid\tnon_covid\ttotal".to_string()];
    let mut sum = ClassCounts::default();
    for s in Split::ALL {
        let c = m.counts(s);
        sum.covid += c.covid;
        sum.non_covid += c.non_covid;
        lines.push(format!("{s}\t{}\t{}\t{}", c.covid, c.non_covid, c.total()));
    }
    lines.push(format!(
        "total\t{}\t{}\t{}",
        sum.covid,
        sum.non_covid,
        sum.total()
    ));
    lines.join("\n")
}

/// Reads a training config and applies the flags shared by `train` and `hpo`.
fn train_config(
    config: &Path,
    manifest: Option<PathBuf>,
) -> Result<(TrainConfig, DatasetManifest), Failure> {
    let mut cfg = TrainConfig::read(config).map_err(|e| usage("--config", e))?;
    if manifest.is_some() {
        cfg.manifest = manifest;
    }
    let Some(path) = cfg.manifest.clone() else {
        return Err(usage("--manifest", "no manifest given by flag or config"));
    };
    let m = DatasetManifest::read(&path).map_err(|e| usage("--manifest", e))?;
    Ok((cfg, m))
}

fn train(a: TrainArgs) -> Outcome {
    let (mut cfg, m) = train_config(&a.config, a.manifest)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    cfg.checkpoint = a.checkpoint.or(cfg.checkpoint);
    cfg.checkpoint_dir = a.checkpoint_dir.or(cfg.checkpoint_dir);
    cfg.log = a.log.or(cfg.log);
    if cfg.checkpoint.is_none() {
        return Err(usage(
            "--checkpoint",
            "no checkpoint path given by flag or config",
        ));
    }
    cfg.validate().map_err(|e| usage("--config", e))?;

    let out = train_on_manifest(&cfg, &m).map_err(|e| runtime("training", e))?;
    for e in &out.log.epochs {
        println!(
            "epoch {:>3}  loss {:.4}  train_acc {:.4}  val_acc {:.4}  lr {:e}",
            e.epoch, e.train_loss, e.train_accuracy, e.val_accuracy, e.lr
        );
    }
    println!(
        "best epoch {} with validation accuracy {:.4}{}",
        out.log.best_epoch,
        out.log.best_val_accuracy,
        if out.log.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
    if let Some(p) = &cfg.checkpoint {
        println!("checkpoint: {}", p.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    if a.batch_size == 0 {
        return Err(usage("--batch-size", "must be at least 1"));
    }
    let ck = load_checkpoint(&a.checkpoint).map_err(|e| usage("--checkpoint", e))?;
    let enhance = preprocessing_from_kv(&ck.meta).map_err(|e| usage("--checkpoint", e))?;
    let manifest_path = match a
        .manifest
        .or_else(|| ck.meta.get("manifest").map(PathBuf::from))
    {
        Some(p) => p,
        None => {
            return Err(usage(
                "--manifest",
                "the checkpoint records no manifest, pass one",
            ))
        }
    };
    let m = DatasetManifest::read(&manifest_path).map_err(|e| usage("--manifest", e))?;
    let config = ck.config;
    let model = ViT::from_params(config, ck.params).map_err(|e| runtime("loading model", e))?;
    let data = Dataset::from_manifest(&m, a.split, &config, enhance.as_ref())
        .map_err(|e| runtime("loading images", e))?;
    let report = evaluate(&model, &data, a.batch_size).map_err(|e| runtime("evaluating", e))?;
    println!("split: {}\nsamples: {}", a.split, data.len());
    print!("{}", report.to_text());
    if let Some(p) = &a.json {
        write_atomic(p, report.to_json().as_bytes()).map_err(|e| runtime("writing report", e))?;
    }
    Ok(())
}

fn hpo(a: HpoArgs) -> Outcome {
    if a.trials == 0 {
        return Err(usage("--trials", "must be at least 1"));
    }
    if a.epochs == 0 {
        return Err(usage("--epochs", "must be at least 1"));
    }
    let (base, m) = train_config(&a.config, a.manifest)?;
    let mut trials = sample_trials(a.trials, a.seed).map_err(|e| usage("--trials", e))?;
    for t in &mut trials {
        t.epochs = a.epochs;
    }
    let records = run_search_on_manifest(&trials, &base, &m, a.subsample, a.seed)
        .map_err(|e| runtime("search", e))?;
    let text = results_text(&records);
    if let Some(p) = &a.output {
        write_atomic(p, text.as_bytes()).map_err(|e| runtime("writing results", e))?;
    }
    if let Some(p) = &a.json {
        write_atomic(p, results_json(&records).as_bytes())
            .map_err(|e| runtime("writing results", e))?;
    }
    print!("{text}");
    Ok(())
}

fn inspect(a: InspectArgs) -> Outcome {
    let (config, stored) = match (&a.checkpoint, &a.config) {
        (Some(p), _) => {
            let ck = load_checkpoint(p).map_err(|e| usage("--checkpoint", e))?;
            for (k, v) in ck.meta.iter() {
                println!("meta.{k}: {v}");
            }
            (ck.config, Some(ck.params.numel()))
        }
        (None, Some(p)) => (
            TrainConfig::read(p).map_err(|e| usage("--config", e))?.vit,
            None,
        ),
        (None, None) => unreachable!("clap requires one source"),
    };
    print!("{}", describe(&config));
    if let Some(n) = stored {
        if n != param_count(&config) {
            return Err(runtime(
                "checking parameters",
                format!(
                    "checkpoint holds {n} values, the config implies {}",
                    param_count(&config)
                ),
            ));
        }
    }
    Ok(())
}

/// Shape table and totals for `config`, one `name<TAB>shape<TAB>numel` row
/// per parameter.
pub fn describe(config: &ViTConfig) -> String {
    let mut out = format!(
        "image_size: {}\npatch_size: {}\nseq_len: {}\nhidden_dim: {}\nnum_layers: {}\n",
        config.image_size,
        config.patch_size,
        config.seq_len(),
        config.hidden_dim,
        config.num_layers
    );
    for (name, shape) in shape_table(config) {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        out += &format!(
            "{name}\t[{}]\t{}\n",
            dims.join(", "),
            shape.iter().product::<usize>()
        );
    }
    out += &format!("param_count: {}\n", param_count(config));
    out
}
