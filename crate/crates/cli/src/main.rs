//! `svsec` command line: dataset splitting, training, evaluation, saliency
//! extraction, and the ablation harness.
//!
//! Every command is reproducible: outputs are a pure function of (inputs,
//! seed, config). The resolved run configuration is echoed to stderr before
//! any side effect. Exit codes: 0 success, 2 usage/config error, 3 data
//! error, 4 runtime/numeric error.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use svsec_core::data::{
    self, per_class_counts, scan_dataset, stratified_split, Split, SplitManifest,
};
use svsec_core::error::Error as CoreError;
use svsec_core::metrics::{render_report, ReportFormat};
use svsec_core::model::{
    default_scorer, evaluate, load_checkpoint, load_scorer, precompute_maps, train, BranchMode,
    Hyper, ModelConfig, OptimConfig, SvsecModel, TrainSetup,
};
use svsec_core::saliency::{compute_saliency, SaliencyMap, Scorer, ScorerModel};

#[derive(Parser)]
#[command(name = "svsec", version, about = "Dual-branch endoscopy image classifier")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Scan a class-folder dataset and write a stratified split manifest.
    Split {
        /// Dataset root: one subdirectory per class.
        #[arg(long)]
        data: PathBuf,
        /// Manifest output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// train,val,test ratios; must be positive and sum to 1.
        #[arg(long, value_parser = parse_ratios, default_value = "0.60,0.25,0.15")]
        ratios: (f64, f64, f64),
    },
    /// Train a model on the train split, keeping the best-validation epoch.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON run config (model, optimizer, paths); flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path; the per-epoch CSV goes next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset root override; defaults to the manifest's directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        ckpt: PathBuf,
        /// text, csv or json.
        #[arg(long, default_value = "text")]
        format: String,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Extract the saliency map of one image as an 8-bit grayscale PNG.
    Saliency {
        #[arg(long)]
        image: PathBuf,
        /// Scorer checkpoint; omit to use the seeded default scorer.
        #[arg(long)]
        scorer: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and evaluate the four ablation variants, writing one report.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the report, checkpoints and logs.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn parse_ratios(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated ratios, got '{s}'"));
    }
    let mut vals = [0.0f64; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p.trim().parse().map_err(|e| format!("bad ratio '{p}': {e}"))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

/// Usage-level failure (bad paths, bad flags); maps to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Config(_)) | Some(CoreError::Contract(_)) => 2,
        Some(CoreError::Data(_))
        | Some(CoreError::Metric(_))
        | Some(CoreError::Checkpoint(_))
        | Some(CoreError::Io(_)) => 3,
        Some(CoreError::InvalidShape(_))
        | Some(CoreError::ShapeMismatch(_))
        | Some(CoreError::Numeric(_)) => 4,
        None => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code_for(&err));
        }
    }
}

// ── Run configuration ────────────────────────────────────────────────────

/// JSON config file: every field optional, flags win over it.
#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    data_root: Option<PathBuf>,
    model: Option<ModelConfig>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f32>,
    optim: Option<OptimConfig>,
    scorer_ckpt: Option<PathBuf>,
    saliency_cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, serde::Serialize)]
struct RunConfig {
    seed: u64,
    data_root: Option<PathBuf>,
    model: ModelConfig,
    hyper: Hyper,
    scorer_ckpt: Option<PathBuf>,
    saliency_cache_dir: Option<PathBuf>,
}

struct FlagOverrides {
    epochs: Option<usize>,
    lr: Option<f32>,
    batch: Option<usize>,
    seed: Option<u64>,
    data: Option<PathBuf>,
}

impl FlagOverrides {
    fn none() -> Self {
        FlagOverrides { epochs: None, lr: None, batch: None, seed: None, data: None }
    }
}

impl RunConfig {
    /// defaults <- config file <- command-line flags, rightmost wins.
    fn resolve(config_path: Option<&Path>, flags: FlagOverrides) -> Result<RunConfig> {
        let file: FileConfig = match config_path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| usage(format!("config {}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let mut model = file.model.unwrap_or_default();
        let mut hyper = Hyper::default();
        if let Some(o) = file.optim {
            hyper.optim = o;
        }
        if let Some(e) = file.epochs {
            hyper.epochs = e;
        }
        if let Some(b) = file.batch_size {
            hyper.batch_size = b;
        }
        if let Some(lr) = file.lr {
            hyper.optim.lr = lr;
        }
        let mut seed = file.seed.unwrap_or(model.seed);

        if let Some(e) = flags.epochs {
            hyper.epochs = e;
        }
        if let Some(lr) = flags.lr {
            hyper.optim.lr = lr;
        }
        if let Some(b) = flags.batch {
            hyper.batch_size = b;
        }
        if let Some(s) = flags.seed {
            seed = s;
        }
        model.seed = seed;
        hyper.seed = seed;
        let run = RunConfig {
            seed,
            data_root: flags.data.or(file.data_root),
            model,
            hyper,
            scorer_ckpt: file.scorer_ckpt,
            saliency_cache_dir: file.saliency_cache_dir,
        };
        run.model.validate()?;
        Ok(run)
    }

    fn log(&self) {
        eprintln!(
            "resolved config: {}",
            serde_json::to_string(self).expect("config serializes")
        );
    }
}

fn resolve_root(manifest: &Path, data: Option<&Path>) -> PathBuf {
    match data {
        Some(d) => d.to_path_buf(),
        None => manifest.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
    }
}

fn load_manifest_checked(path: &Path) -> Result<SplitManifest> {
    if !path.is_file() {
        return Err(usage(format!("manifest {} does not exist", path.display())));
    }
    Ok(SplitManifest::read(path)?)
}

/// Scorer selection shared by train/eval/ablate/saliency: an explicit
/// checkpoint when given, the seeded default otherwise.
fn resolve_scorer(run: &RunConfig) -> Result<ScorerModel> {
    match &run.scorer_ckpt {
        Some(p) => {
            if !p.is_file() {
                return Err(usage(format!("scorer checkpoint {} does not exist", p.display())));
            }
            Ok(load_scorer(p)?)
        }
        None => Ok(default_scorer(&run.model)?),
    }
}

fn maps_for(
    run: &RunConfig,
    root: &Path,
    entries: &[(PathBuf, usize)],
) -> Result<BTreeMap<PathBuf, SaliencyMap>> {
    if !run.model.needs_maps() {
        return Ok(BTreeMap::new());
    }
    let scorer = resolve_scorer(run)?;
    eprintln!(
        "precomputing {} saliency maps (scorer checksum {:016x})",
        entries.len(),
        scorer.checksum()
    );
    Ok(precompute_maps(
        root,
        entries,
        run.model.input_side(),
        &scorer,
        run.saliency_cache_dir.as_deref(),
    )?)
}

// ── Commands ─────────────────────────────────────────────────────────────

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Split { data, out, seed, ratios } => cmd_split(&data, &out, seed, ratios),
        Cmd::Train { manifest, config, out, epochs, lr, batch, seed, data } => {
            let run = RunConfig::resolve(
                config.as_deref(),
                FlagOverrides { epochs, lr, batch, seed, data },
            )?;
            cmd_train(&manifest, &out, run)
        }
        Cmd::Eval { manifest, split, ckpt, format, out, config, data, batch } => {
            let run = RunConfig::resolve(
                config.as_deref(),
                FlagOverrides { batch, data, ..FlagOverrides::none() },
            )?;
            cmd_eval(&manifest, &split, &ckpt, &format, out.as_deref(), run)
        }
        Cmd::Saliency { image, scorer, out, config } => {
            let mut run = RunConfig::resolve(config.as_deref(), FlagOverrides::none())?;
            if let Some(s) = scorer {
                run.scorer_ckpt = Some(s);
            }
            cmd_saliency(&image, &out, run)
        }
        Cmd::Ablate { manifest, config, out, epochs, lr, batch, seed, data } => {
            let run = RunConfig::resolve(
                config.as_deref(),
                FlagOverrides { epochs, lr, batch, seed, data },
            )?;
            cmd_ablate(&manifest, &out, run)
        }
    }
}

fn cmd_split(data: &Path, out: &Path, seed: u64, ratios: (f64, f64, f64)) -> Result<()> {
    if !data.is_dir() {
        return Err(usage(format!("dataset directory {} does not exist", data.display())));
    }
    eprintln!(
        "resolved config: {{\"data\":{:?},\"out\":{:?},\"seed\":{seed},\"ratios\":{ratios:?}}}",
        data, out
    );
    let catalog = scan_dataset(data)?;
    for w in &catalog.warnings {
        eprintln!("warning: {w}");
    }
    let manifest = stratified_split(&catalog, ratios, seed)?;
    manifest.write(out)?;
    let (tc, vc, sc) = (
        per_class_counts(&manifest.train),
        per_class_counts(&manifest.val),
        per_class_counts(&manifest.test),
    );
    for (label, class) in catalog.classes.iter().enumerate() {
        println!(
            "class {label} ({class}): train {} val {} test {}",
            tc.get(&label).unwrap_or(&0),
            vc.get(&label).unwrap_or(&0),
            sc.get(&label).unwrap_or(&0)
        );
    }
    println!(
        "total: train {} val {} test {}",
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len()
    );
    println!("manifest written to {}", out.display());
    Ok(())
}

fn cmd_train(manifest_path: &Path, out: &Path, run: RunConfig) -> Result<()> {
    run.log();
    let manifest = load_manifest_checked(manifest_path)?;
    let root = resolve_root(manifest_path, run.data_root.as_deref());
    let mut entries = manifest.train.clone();
    entries.extend_from_slice(&manifest.val);
    let maps = maps_for(&run, &root, &entries)?;

    let mut model = SvsecModel::new(&run.model)?;
    eprintln!(
        "training {} parameters for {} epochs",
        model.store.total_elements(),
        run.hyper.epochs
    );
    let log_path = out.with_extension("log.csv");
    let setup = TrainSetup {
        root: &root,
        train: &manifest.train,
        val: &manifest.val,
        maps: &maps,
        hyper: run.hyper,
        log_path: Some(&log_path),
        ckpt_path: Some(out),
    };
    let report = train(&mut model, &setup)?;
    println!(
        "best epoch {} with validation accuracy {:.2}",
        report.best_epoch, report.best_val_accuracy
    );
    println!("checkpoint written to {}", out.display());
    println!("epoch log written to {}", log_path.display());
    Ok(())
}

fn cmd_eval(
    manifest_path: &Path,
    split: &str,
    ckpt: &Path,
    format: &str,
    out: Option<&Path>,
    mut run: RunConfig,
) -> Result<()> {
    let format: ReportFormat = format.parse::<ReportFormat>()?;
    let which = Split::parse(split)?;
    if !ckpt.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", ckpt.display())));
    }
    let manifest = load_manifest_checked(manifest_path)?;
    let loaded = load_checkpoint(ckpt)?;
    // The checkpoint's own config drives the model; the run config only
    // contributes paths, batch size and the scorer.
    run.model = loaded.model.cfg.clone();
    run.log();

    let manifest_classes = manifest.num_classes();
    if manifest_classes != loaded.model.cfg.num_classes {
        return Err(CoreError::Config(format!(
            "manifest has {manifest_classes} classes, checkpoint expects {}",
            loaded.model.cfg.num_classes
        ))
        .into());
    }
    let root = resolve_root(manifest_path, run.data_root.as_deref());
    let entries = manifest.split(which);
    let maps = maps_for(&run, &root, entries)?;
    let report = evaluate(&loaded.model, &root, entries, &maps, run.hyper.batch_size)?;
    for c in &report.auc_excluded_classes {
        eprintln!("warning: class {c} excluded from AUC (no positives or no negatives)");
    }
    let rendered = render_report(&report, format);
    match out {
        Some(p) => fs::write(p, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_saliency(image: &Path, out: &Path, run: RunConfig) -> Result<()> {
    if !image.is_file() {
        return Err(usage(format!("image {} does not exist", image.display())));
    }
    run.log();
    let scorer = resolve_scorer(&run)?;
    let side = scorer.input_side() * 2;
    let pixels = data::load_image(image, side)?;
    let map = compute_saliency(&pixels, side, &scorer)?;
    map.write_png(out)?;
    println!("saliency map ({0}x{0}) written to {1}", map.side(), out.display());
    Ok(())
}

/// The four ablation rows: CNN branch alone, CNN + saliency fusion, Swin
/// branch alone, and the full dual-branch model with both fusion paths on.
fn ablation_variants(base: &ModelConfig) -> Vec<(&'static str, ModelConfig)> {
    let mut vgg = base.clone();
    vgg.branches = BranchMode::CnnOnly;
    vgg.cnn.fuse_input_channel = false;
    vgg.cnn.fuse_per_stage = false;

    let mut vgg_sal = base.clone();
    vgg_sal.branches = BranchMode::CnnOnly;
    vgg_sal.cnn.fuse_input_channel = true;
    vgg_sal.cnn.fuse_per_stage = true;

    let mut swin = base.clone();
    swin.branches = BranchMode::SwinOnly;

    let mut full = base.clone();
    full.branches = BranchMode::Both;
    full.cnn.fuse_input_channel = true;
    full.cnn.fuse_per_stage = true;

    vec![
        ("modified-vgg", vgg),
        ("modified-vgg+saliency", vgg_sal),
        ("swin", swin),
        ("svsec", full),
    ]
}

fn cmd_ablate(manifest_path: &Path, out_dir: &Path, run: RunConfig) -> Result<()> {
    run.log();
    let manifest = load_manifest_checked(manifest_path)?;
    let root = resolve_root(manifest_path, run.data_root.as_deref());
    fs::create_dir_all(out_dir)?;

    let mut entries = manifest.train.clone();
    entries.extend_from_slice(&manifest.val);
    entries.extend_from_slice(&manifest.test);

    let mut rows = Vec::new();
    let mut shared_maps: Option<BTreeMap<PathBuf, SaliencyMap>> = None;
    for (name, cfg) in ablation_variants(&run.model) {
        eprintln!("=== ablation variant: {name}");
        let maps = if cfg.needs_maps() {
            if shared_maps.is_none() {
                let variant_run = RunConfig { model: cfg.clone(), ..run.clone() };
                shared_maps = Some(maps_for(&variant_run, &root, &entries)?);
            }
            shared_maps.clone().expect("filled above")
        } else {
            BTreeMap::new()
        };
        let mut model = SvsecModel::new(&cfg)?;
        let ckpt = out_dir.join(format!("{name}.ckpt"));
        let log = out_dir.join(format!("{name}.log.csv"));
        let setup = TrainSetup {
            root: &root,
            train: &manifest.train,
            val: &manifest.val,
            maps: &maps,
            hyper: run.hyper,
            log_path: Some(&log),
            ckpt_path: Some(&ckpt),
        };
        let train_report = train(&mut model, &setup)?;
        eprintln!(
            "{name}: best epoch {} val accuracy {:.2}",
            train_report.best_epoch, train_report.best_val_accuracy
        );
        let report = evaluate(&model, &root, &manifest.test, &maps, run.hyper.batch_size)?;
        rows.push((name, report));
    }

    let mut csv = String::from("method,f1,accuracy,auc,recall,precision\n");
    for (name, report) in &rows {
        csv.push_str(&format!("{name},{}\n", report.formatted_row().join(",")));
    }
    let report_path = out_dir.join("ablation.csv");
    fs::write(&report_path, &csv)?;
    print!("{csv}");
    println!("ablation report written to {}", report_path.display());
    Ok(())
}
