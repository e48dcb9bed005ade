//! Command-line front end. The binary only forwards its arguments to [`run`].

mod config;

pub use config::{ArchChoice, RunConfig};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{
    generate_synthetic, import_directory, ingest_recordings, read_dataset, read_recordings_dir, read_signal,
    split_holdout, synthesize_recording, write_dataset, write_recordings_dir, Dataset, Provenance,
    SyntheticConfig,
};
use crate::evaluation::{
    cross_validate_with_progress, export_embeddings, predict_with_confidence, reconstruction_band_report,
    CODE_HASH,
};
use crate::model::{
    init_model, load_checkpoint, save_checkpoint, CheckpointMeta, InputMode, MultiModalAE, MultiModalSample,
};
use crate::objective::Variant;
use crate::training::{extract_representations, train_autoencoder, train_classifier, LinearClassifier};

#[derive(Debug, Parser)]
#[command(name = "cmdae", version, about = "Multi-modal denoising autoencoder toolkit")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for every artifact.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seeds data generation, splitting, initialisation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for cross-validation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SyntheticPreset {
    Default,
    Moderate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeArg {
    Joint,
    A,
    V,
    Union,
}

impl ProbeArg {
    fn modes(self) -> &'static [InputMode] {
        match self {
            ProbeArg::Joint => &[InputMode::Joint],
            ProbeArg::A => &[InputMode::SingleA],
            ProbeArg::V => &[InputMode::SingleV],
            ProbeArg::Union => &[InputMode::SingleA, InputMode::SingleV],
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and print its class counts.
    GenData {
        #[arg(long, value_enum)]
        preset: Option<SyntheticPreset>,
        #[arg(long)]
        classes: Option<usize>,
        /// Comma-separated samples per class.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long)]
        signal_length: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long, default_value = "dataset.cmd")]
        output: String,
    },
    /// Write a directory of continuous synthetic recordings with crank triggers.
    GenRecordings {
        #[arg(long, default_value_t = 1)]
        per_class: usize,
        #[arg(long)]
        seconds: Option<f64>,
        #[arg(long, default_value = "recordings")]
        output: String,
    },
    /// Segment recordings into windows, drop outliers and write a dataset.
    Ingest {
        recordings: PathBuf,
        /// Robust z-score threshold; `inf` keeps everything.
        #[arg(long)]
        outlier_z: Option<f64>,
        #[arg(long)]
        signal_length: Option<usize>,
        #[arg(long, default_value = "dataset.cmd")]
        output: String,
    },
    /// Convert a manifest directory of raw signal files into a dataset file.
    Import {
        dir: PathBuf,
        #[arg(long, default_value = "dataset.cmd")]
        output: String,
    },
    /// Train one autoencoder and a linear probe on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, value_enum, default_value = "joint")]
        probe: ProbeArg,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// k-fold evaluation of one or more objective variants.
    CrossValidate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated: proposed, vanilla, no-missing, corrnet.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Classify one sample from raw signal files.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        acoustic: Option<PathBuf>,
        #[arg(long)]
        vibration: Option<PathBuf>,
        /// joint, a or v.
        #[arg(long)]
        mode: InputMode,
    },
    /// Write joint and single-modality codes of every sample as TSV.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "embeddings.tsv")]
        output: String,
    },
    /// Low/high band reconstruction errors for every input mode.
    BandReport {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cutoff_hz: Option<f64>,
    },
}

/// Stored next to a checkpoint by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFile {
    pub code_hash: String,
    pub run_config: serde_json::Value,
    pub class_names: Vec<String>,
    pub classifier: LinearClassifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub code_hash: String,
    pub run_config: serde_json::Value,
    pub mode: InputMode,
    pub label: usize,
    pub class_name: String,
    pub confidence: Vec<f64>,
}

/// Fraction of the Nyquist frequency used when no band cutoff is given.
pub const DEFAULT_CUTOFF_FRACTION: f64 = 0.3;

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.synthetic.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    match cli.command {
        Command::GenData {
            preset,
            classes,
            counts,
            signal_length,
            separation,
            output,
        } => {
            if let Some(p) = preset {
                let seed = cfg.synthetic.seed;
                cfg.synthetic = match p {
                    SyntheticPreset::Default => SyntheticConfig::default(),
                    SyntheticPreset::Moderate => SyntheticConfig::moderate(),
                };
                cfg.synthetic.seed = seed;
            }
            match (classes, counts) {
                (Some(k), Some(c)) => {
                    cfg.synthetic.n_classes = k;
                    cfg.synthetic.per_class_counts = c;
                }
                (None, Some(c)) => {
                    cfg.synthetic.n_classes = c.len();
                    cfg.synthetic.per_class_counts = c;
                }
                (Some(k), None) => {
                    cfg.synthetic.n_classes = k;
                    cfg.synthetic.per_class_counts.resize(k, *cfg.synthetic.per_class_counts.last().unwrap_or(&1));
                }
                (None, None) => {}
            }
            if let Some(l) = signal_length {
                cfg.synthetic.signal_length = l;
            }
            if let Some(s) = separation {
                cfg.synthetic.class_separation = s;
            }
            gen_data(&cfg, &output)
        }
        Command::GenRecordings {
            per_class,
            seconds,
            output,
        } => {
            if let Some(s) = seconds {
                cfg.recordings.seconds = s;
            }
            gen_recordings(&cfg, per_class, &output)
        }
        Command::Ingest {
            recordings,
            outlier_z,
            signal_length,
            output,
        } => {
            if let Some(z) = outlier_z {
                cfg.outlier_z = z;
            }
            if let Some(l) = signal_length {
                cfg.segment.signal_length = l;
            }
            ingest(&cfg, &recordings, &output)
        }
        Command::Import { dir, output } => import(&cfg, &dir, &output),
        Command::Train {
            data,
            variant,
            probe,
            epochs,
        } => {
            if let Some(v) = variant {
                cfg.train.loss.variant = v;
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            train(&cfg, &data, probe)
        }
        Command::CrossValidate { data, variants, epochs } => {
            if let Some(v) = variants {
                cfg.variants = v;
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            cross_validate(&cfg, &data)
        }
        Command::Predict {
            model,
            classifier,
            acoustic,
            vibration,
            mode,
        } => predict(&cfg, &model, &classifier, acoustic.as_deref(), vibration.as_deref(), mode),
        Command::ExportEmbeddings { model, data, output } => embeddings(&cfg, &model, &data, &output),
        Command::BandReport { model, data, cutoff_hz } => {
            if cutoff_hz.is_some() {
                cfg.band_cutoff_hz = cutoff_hz;
            }
            band_report(&cfg, &model, &data)
        }
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(cfg.out.join(name))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn echo_header(cfg: &RunConfig) -> Result<String> {
    Ok(format!("code_hash {CODE_HASH}\nrun_config {}", cfg.echo_string()?))
}

/// Attaches the run configuration and code version to a dataset's provenance.
fn stamp(ds: &mut Dataset, cfg: &RunConfig) -> Result<()> {
    let inner = std::mem::take(&mut ds.provenance.config);
    ds.provenance = Provenance {
        kind: ds.provenance.kind,
        config: serde_json::json!({ "source": inner, "code_hash": CODE_HASH, "run_config": cfg.echo()? }),
    };
    Ok(())
}

pub fn class_count_table(ds: &Dataset) -> String {
    let mut s = String::from("class      samples\n");
    for (name, n) in ds.class_names.iter().zip(ds.class_counts()) {
        let _ = writeln!(s, "{name:<10} {n:>7}");
    }
    let _ = writeln!(s, "{:<10} {:>7}", "total", ds.len());
    s
}

fn gen_data(cfg: &RunConfig, output: &str) -> Result<()> {
    let mut ds = generate_synthetic(&cfg.synthetic)?;
    stamp(&mut ds, cfg)?;
    let path = out_path(cfg, output)?;
    write_dataset(&ds, &path, cfg.precision)?;
    print!("{}", class_count_table(&ds));
    println!("wrote {}", path.display());
    Ok(())
}

fn gen_recordings(cfg: &RunConfig, per_class: usize, output: &str) -> Result<()> {
    if per_class == 0 {
        bail!("--per-class must be positive");
    }
    let names = crate::data::class_names(cfg.synthetic.n_classes);
    let mut recs = Vec::new();
    for label in 0..names.len() {
        for k in 0..per_class {
            let id = format!("{}-r{k:02}", names[label]);
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add((label * per_class + k) as u64);
            recs.push(synthesize_recording(&id, label, &cfg.recordings, seed));
        }
    }
    let dir = out_path(cfg, output)?;
    write_recordings_dir(&dir, &names, &recs, cfg.precision)?;
    let manifest = dir.join("run.json");
    write_text(
        &manifest,
        &serde_json::to_string_pretty(&serde_json::json!({ "code_hash": CODE_HASH, "run_config": cfg.echo()? }))?,
    )?;
    println!("wrote {} recordings to {}", recs.len(), dir.display());
    Ok(())
}

fn ingest(cfg: &RunConfig, dir: &Path, output: &str) -> Result<()> {
    let (names, recs) = read_recordings_dir(dir)?;
    let (mut ds, report) = ingest_recordings(names, &recs, &cfg.segment, cfg.outlier_z)?;
    stamp(&mut ds, cfg)?;
    let path = out_path(cfg, output)?;
    write_dataset(&ds, &path, cfg.precision)?;
    let mut text = String::from("recording        revolutions  windows  raw_length\n");
    for r in &report.segmentation {
        let _ = writeln!(
            text,
            "{:<16} {:>11} {:>8}  {}-{}",
            r.recording, r.revolutions, r.windows, r.min_raw_length, r.max_raw_length
        );
    }
    let windows: usize = report.segmentation.iter().map(|r| r.windows).sum();
    let _ = writeln!(
        text,
        "windows {windows}, outliers dropped {} (threshold {}), kept {}",
        report.outliers.rejected.len(),
        cfg.outlier_z,
        report.outliers.kept
    );
    for r in &report.outliers.rejected {
        let _ = writeln!(text, "  dropped {} (class {}, score {:.2}, round {})", r.id, r.label, r.score, r.round);
    }
    print!("{text}");
    let json = serde_json::json!({ "code_hash": CODE_HASH, "run_config": cfg.echo()?, "report": report });
    write_text(&out_path(cfg, "ingest_report.json")?, &serde_json::to_string_pretty(&json)?)?;
    write_text(&out_path(cfg, "ingest_report.txt")?, &format!("# {}\n{text}", echo_header(cfg)?.replace('\n', "\n# ")))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn import(cfg: &RunConfig, dir: &Path, output: &str) -> Result<()> {
    let mut ds = import_directory(dir)?;
    stamp(&mut ds, cfg)?;
    let path = out_path(cfg, output)?;
    write_dataset(&ds, &path, cfg.precision)?;
    print!("{}", class_count_table(&ds));
    println!("wrote {}", path.display());
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<(MultiModalAE, CheckpointMeta)> {
    load_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn train(cfg: &RunConfig, data: &Path, probe: ProbeArg) -> Result<()> {
    let ds = load_dataset(data)?;
    ds.validate_for_training()?;
    let ecfg = cfg.eval_config()?;
    if ds.signal_length != ecfg.arch.signal_length {
        bail!(
            "dataset signal length {} does not match architecture input {}",
            ds.signal_length,
            ecfg.arch.signal_length
        );
    }
    let split = split_holdout(&ds, cfg.holdout_per_class, cfg.seed)?;
    let val = ds.subset(&split.validation);
    let pool = ds.subset(&split.pool);
    let model = init_model(&ecfg.arch, ecfg.model_seed)?;
    let tcfg = ecfg.train.clone();
    let (model, history) = train_autoencoder(model, &pool, &val, &tcfg)?;
    let reps = probe
        .modes()
        .iter()
        .map(|&m| extract_representations(&model, &pool, m))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<_> = reps.iter().collect();
    let clf = train_classifier(&refs, ds.n_classes(), &cfg.probe)?;

    let meta = CheckpointMeta {
        code_hash: CODE_HASH.to_string(),
        config: cfg.echo()?,
        class_names: ds.class_names.clone(),
    };
    let ckpt = out_path(cfg, "model.ckpt")?;
    save_checkpoint(&model, &meta, &ckpt)?;
    let file = ClassifierFile {
        code_hash: CODE_HASH.to_string(),
        run_config: cfg.echo()?,
        class_names: ds.class_names.clone(),
        classifier: clf,
    };
    write_text(&out_path(cfg, "classifier.json")?, &serde_json::to_string_pretty(&file)?)?;
    let header = echo_header(cfg)?.replace('\n', "\n# ");
    write_text(&out_path(cfg, "history.tsv")?, &format!("# {header}\n{}", history.to_tsv(&tcfg)))?;
    println!(
        "trained {} for {} epochs (best {}), probe on {} with {} iterations",
        tcfg.loss.variant,
        history.epochs.len(),
        history.best_epoch,
        file.classifier.source.short(),
        file.classifier.iterations
    );
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn cross_validate(cfg: &RunConfig, data: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let ecfg = cfg.eval_config()?;
    let report = cross_validate_with_progress(&ds, &cfg.variants, &ecfg, cfg.jobs, cfg.echo()?, |o| {
        let what = match &o.status {
            crate::evaluation::FoldStatus::Ok { best_epoch, .. } => format!("done (best epoch {best_epoch})"),
            crate::evaluation::FoldStatus::Failed { error } => format!("FAILED: {error}"),
        };
        eprintln!("{} fold {}: {what}", o.variant, o.fold);
    })?;
    write_text(&out_path(cfg, "report.json")?, &report.to_json()?)?;
    let header = format!("# {}\n", echo_header(cfg)?.replace('\n', "\n# "));
    let text = report.to_text();
    write_text(&out_path(cfg, "report.txt")?, &format!("{header}{text}"))?;
    write_text(&out_path(cfg, "confusion.txt")?, &format!("{header}{}", report.confusion_text()))?;
    print!("{text}");
    let failed = report.failures();
    if !failed.is_empty() {
        let list: Vec<String> = failed.iter().map(|f| format!("{} fold {}", f.variant, f.fold)).collect();
        bail!("{} of {} runs failed: {}", failed.len(), report.folds.len(), list.join(", "));
    }
    Ok(())
}

fn predict(
    cfg: &RunConfig,
    model: &Path,
    classifier: &Path,
    acoustic: Option<&Path>,
    vibration: Option<&Path>,
    mode: InputMode,
) -> Result<()> {
    let read = |p: Option<&Path>, what: &str, needed: bool| -> Result<Vec<f64>> {
        match p {
            Some(p) => read_signal(p, cfg.precision).with_context(|| format!("reading {what} signal")),
            None if needed => Err(anyhow!(
                "mode {} needs the {what} signal; pass --{what} or choose a single-modality mode explicitly",
                mode.short()
            )),
            None => Ok(Vec::new()),
        }
    };
    let a = read(acoustic, "acoustic", mode != InputMode::SingleV)?;
    let v = read(vibration, "vibration", mode != InputMode::SingleA)?;
    let (model, meta) = load_model(model)?;
    let text = std::fs::read_to_string(classifier).with_context(|| format!("reading {}", classifier.display()))?;
    let file: ClassifierFile = serde_json::from_str(&text).context("parsing classifier file")?;
    if file.classifier.n_features != model.latent_dim() {
        bail!(
            "classifier expects {} features but the model's code layer has {}",
            file.classifier.n_features,
            model.latent_dim()
        );
    }
    let sample = MultiModalSample {
        id: "input".into(),
        label: 0,
        acoustic: a,
        vibration: v,
    };
    let (label, confidence) = predict_with_confidence(&model, &file.classifier, &sample, mode)?;
    let names = if file.class_names.is_empty() { &meta.class_names } else { &file.class_names };
    let out = Prediction {
        code_hash: CODE_HASH.to_string(),
        run_config: cfg.echo()?,
        mode,
        label,
        class_name: names.get(label).cloned().unwrap_or_else(|| label.to_string()),
        confidence,
    };
    let json = serde_json::to_string_pretty(&out)?;
    write_text(&out_path(cfg, "prediction.json")?, &json)?;
    println!("{json}");
    Ok(())
}

fn embeddings(cfg: &RunConfig, model: &Path, data: &Path, output: &str) -> Result<()> {
    let ds = load_dataset(data)?;
    let (model, _) = load_model(model)?;
    let refs: Vec<&MultiModalSample> = ds.samples.iter().collect();
    let path = out_path(cfg, output)?;
    let rows = export_embeddings(&model, &refs, &path, Some(&echo_header(cfg)?))?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn band_report(cfg: &RunConfig, model: &Path, data: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let (model, _) = load_model(model)?;
    let refs: Vec<&MultiModalSample> = ds.samples.iter().collect();
    let cutoff = cfg.band_cutoff_hz.unwrap_or(DEFAULT_CUTOFF_FRACTION * ds.sample_rate / 2.0);
    let report = reconstruction_band_report(&model, &refs, cutoff, ds.sample_rate)?;
    let text = report.to_text();
    let header = format!("# {}\n", echo_header(cfg)?.replace('\n', "\n# "));
    write_text(&out_path(cfg, "band_report.txt")?, &format!("{header}{text}"))?;
    let json = serde_json::json!({ "code_hash": CODE_HASH, "run_config": cfg.echo()?, "report": report });
    write_text(&out_path(cfg, "band_report.json")?, &serde_json::to_string_pretty(&json)?)?;
    print!("{text}");
    Ok(())
}

/// Entry point for the binary: parses, runs, and maps errors to exit code 1.
pub fn main_with_args<I, T>(args: I) -> std::process::ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return std::process::ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
