//! Probe experiments on frozen representations, k-fold orchestration,
//! reports, embedding export and reconstruction band analysis.

mod bands;
mod embeddings;
mod metrics;

pub use bands::{band_errors, reconstruction_band_report, split_bands, BandErrors, BandReport};
pub use embeddings::{
    embedding_rows, embeddings_to_tsv, export_embeddings, parse_embeddings, principal_projection, EmbeddingRow,
};
pub use metrics::{average_metrics, compute_metrics, Averaging, MetricSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use thiserror::Error;

use crate::data::{split_holdout, stratified_folds, DataError, Dataset, Provenance};
use crate::model::{init_model, ArchConfig, InputMode, LatentBatch, ModelError, MultiModalAE, MultiModalSample};
use crate::objective::{LossConfig, Variant};
use crate::training::{
    extract_representations, train_autoencoder, train_classifier, ClassifierConfig, LinearClassifier, ProbeSource,
    TrainConfig, TrainError, TrainHistory,
};

/// Content hash of the source tree this binary was built from.
pub const CODE_HASH: &str = env!("CMDAE_CODE_HASH");

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Which representation the probe is trained on. Every experiment is tested
/// in all three input modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    TrainOnJoint,
    TrainOnA,
    TrainOnV,
    TrainOnUnion,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [
        ExperimentId::TrainOnJoint,
        ExperimentId::TrainOnA,
        ExperimentId::TrainOnV,
        ExperimentId::TrainOnUnion,
    ];

    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn source(self) -> ProbeSource {
        match self {
            ExperimentId::TrainOnJoint => ProbeSource::Joint,
            ExperimentId::TrainOnA => ProbeSource::Acoustic,
            ExperimentId::TrainOnV => ProbeSource::Vibration,
            ExperimentId::TrainOnUnion => ProbeSource::Union,
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Exp {} (train {})", self.number(), self.source().short())
    }
}

/// Class id with the highest logit for one sample under `mode`.
pub fn predict(
    model: &MultiModalAE,
    classifier: &LinearClassifier,
    sample: &MultiModalSample,
    mode: InputMode,
) -> Result<usize, EvalError> {
    Ok(predict_with_confidence(model, classifier, sample, mode)?.0)
}

/// Predicted class plus the softmax probability vector.
pub fn predict_with_confidence(
    model: &MultiModalAE,
    classifier: &LinearClassifier,
    sample: &MultiModalSample,
    mode: InputMode,
) -> Result<(usize, Vec<f64>), EvalError> {
    let reps = extract_representations(model, &[sample], mode)?;
    let label = classifier.predict(&reps.codes)?[0];
    let probs = classifier.probabilities(&reps.codes)?.row(0).to_vec();
    Ok((label, probs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub experiment: ExperimentId,
    pub test_mode: InputMode,
    pub metrics: MetricSet,
}

/// Representations of one fold's train and test splits in all three modes.
pub struct FoldRepresentations {
    train: Vec<LatentBatch>,
    test: Vec<LatentBatch>,
}

impl FoldRepresentations {
    pub fn new(
        model: &MultiModalAE,
        train: &[&MultiModalSample],
        test: &[&MultiModalSample],
    ) -> Result<Self, EvalError> {
        let enc = |set: &[&MultiModalSample]| -> Result<Vec<LatentBatch>, EvalError> {
            InputMode::ALL
                .iter()
                .map(|&m| Ok(extract_representations(model, set, m)?))
                .collect()
        };
        Ok(FoldRepresentations {
            train: enc(train)?,
            test: enc(test)?,
        })
    }

    fn train(&self, mode: InputMode) -> &LatentBatch {
        &self.train[mode as usize]
    }

    fn test(&self, mode: InputMode) -> &LatentBatch {
        &self.test[mode as usize]
    }

    /// Rows the probe of `exp` is trained on.
    pub fn probe_inputs(&self, exp: ExperimentId) -> Vec<&LatentBatch> {
        match exp {
            ExperimentId::TrainOnJoint => vec![self.train(InputMode::Joint)],
            ExperimentId::TrainOnA => vec![self.train(InputMode::SingleA)],
            ExperimentId::TrainOnV => vec![self.train(InputMode::SingleV)],
            ExperimentId::TrainOnUnion => vec![self.train(InputMode::SingleA), self.train(InputMode::SingleV)],
        }
    }

    /// Trains the probe for `exp` and scores it on the test split in every mode.
    pub fn run(
        &self,
        exp: ExperimentId,
        n_classes: usize,
        probe: &ClassifierConfig,
        averaging: Averaging,
    ) -> Result<Vec<GridCell>, EvalError> {
        let clf = train_classifier(&self.probe_inputs(exp), n_classes, probe)?;
        InputMode::ALL
            .iter()
            .map(|&mode| {
                let t = self.test(mode);
                let pred = clf.predict(&t.codes)?;
                Ok(GridCell {
                    experiment: exp,
                    test_mode: mode,
                    metrics: compute_metrics(&pred, &t.labels, n_classes, averaging)?,
                })
            })
            .collect()
    }
}

/// One experiment on one fold: probe trained on the train split's
/// representation for `exp`, evaluated on the test split in all three modes.
pub fn run_experiment_grid(
    model: &MultiModalAE,
    train: &[&MultiModalSample],
    test: &[&MultiModalSample],
    exp: ExperimentId,
    n_classes: usize,
    probe: &ClassifierConfig,
    averaging: Averaging,
) -> Result<Vec<GridCell>, EvalError> {
    FoldRepresentations::new(model, train, test)?.run(exp, n_classes, probe, averaging)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub arch: ArchConfig,
    pub holdout_per_class: usize,
    pub folds: usize,
    pub split_seed: u64,
    pub model_seed: u64,
    pub train: TrainConfig,
    pub probe: ClassifierConfig,
    pub averaging: Averaging,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            arch: ArchConfig::paper(),
            holdout_per_class: 10,
            folds: 7,
            split_seed: 0,
            model_seed: 0,
            train: TrainConfig::default(),
            probe: ClassifierConfig::default(),
            averaging: Averaging::Weighted,
        }
    }
}

/// Independent seed for each fold; every variant on a fold shares it so the
/// comparison starts from identical weights.
pub fn fold_seed(base: u64, fold: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(fold as u64 + 1);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum FoldStatus {
    Ok {
        best_epoch: usize,
        epochs_run: usize,
        /// Loss weights after calibration.
        loss: LossConfig,
        cells: Vec<GridCell>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub variant: Variant,
    pub fold: usize,
    pub model_seed: u64,
    pub train_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    #[serde(flatten)]
    pub status: FoldStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variant: Variant,
    pub experiment: ExperimentId,
    pub test_mode: InputMode,
    pub folds_ok: usize,
    /// Fold-averaged metrics; absent when every fold failed.
    pub metrics: Option<MetricSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub samples: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub signal_length: usize,
    pub sample_rate: f64,
    pub provenance: Provenance,
}

impl DatasetSummary {
    pub fn of(ds: &Dataset) -> Self {
        DatasetSummary {
            samples: ds.len(),
            class_names: ds.class_names.clone(),
            class_counts: ds.class_counts(),
            signal_length: ds.signal_length,
            sample_rate: ds.sample_rate,
            provenance: ds.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub validation_size: usize,
    pub pool_size: usize,
    pub folds: usize,
    pub fold_test_sizes: Vec<usize>,
    /// Train, test and validation id sets are pairwise disjoint on every fold.
    pub leak_free: bool,
}

/// Cross-validation results. Serialises deterministically: no timings, no
/// machine-dependent fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub code_hash: String,
    pub config: EvalConfig,
    /// Extra caller-supplied configuration (for example the full run file).
    pub run_config: serde_json::Value,
    pub dataset: DatasetSummary,
    pub protocol: ProtocolSummary,
    pub notes: Vec<String>,
    pub variants: Vec<Variant>,
    pub folds: Vec<FoldOutcome>,
    pub cells: Vec<CellSummary>,
}

impl EvaluationReport {
    pub fn cell(&self, variant: Variant, exp: ExperimentId, mode: InputMode) -> Option<&MetricSet> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.experiment == exp && c.test_mode == mode)
            .and_then(|c| c.metrics.as_ref())
    }

    /// Per-fold metrics of one cell, in fold order, for successful folds.
    pub fn fold_cells(&self, variant: Variant, exp: ExperimentId, mode: InputMode) -> Vec<&MetricSet> {
        self.folds
            .iter()
            .filter(|f| f.variant == variant)
            .filter_map(|f| match &f.status {
                FoldStatus::Ok { cells, .. } => cells
                    .iter()
                    .find(|c| c.experiment == exp && c.test_mode == mode)
                    .map(|c| &c.metrics),
                FoldStatus::Failed { .. } => None,
            })
            .collect()
    }

    pub fn failures(&self) -> Vec<&FoldOutcome> {
        self.folds
            .iter()
            .filter(|f| matches!(f.status, FoldStatus::Failed { .. }))
            .collect()
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Per-variant blocks of experiments by metric by test mode, then an
    /// accuracy comparison across variants.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}-fold cross validation, {} samples ({} validation, {} in pool), code {}",
            self.protocol.folds,
            self.dataset.samples,
            self.protocol.validation_size,
            self.protocol.pool_size,
            self.code_hash
        );
        for note in &self.notes {
            let _ = writeln!(s, "note: {note}");
        }
        let pct = |m: Option<&MetricSet>, f: fn(&MetricSet) -> f64| {
            m.map_or("   fail".to_string(), |m| format!("{:7.2}", 100.0 * f(m)))
        };
        type Getter = fn(&MetricSet) -> f64;
        let metrics: [(&str, Getter); 4] = [
            ("accuracy", |m| m.accuracy),
            ("precision", |m| m.precision),
            ("recall", |m| m.recall),
            ("f1", |m| m.f1),
        ];
        for &v in &self.variants {
            let _ = writeln!(s, "\n== {v} ==");
            let _ = writeln!(s, "{:<24} {:<10} {:>7} {:>7} {:>7}", "experiment", "metric", "h(z)", "h(a)", "h(v)");
            for exp in ExperimentId::ALL {
                for (i, (name, get)) in metrics.iter().enumerate() {
                    let label = if i == 0 { exp.to_string() } else { String::new() };
                    let _ = write!(s, "{label:<24} {name:<10}");
                    for mode in InputMode::ALL {
                        let _ = write!(s, " {}", pct(self.cell(v, exp, mode), *get));
                    }
                    s.push('\n');
                }
            }
        }
        let _ = writeln!(s, "\n== accuracy by method (probe trained on h(z)) ==");
        let _ = writeln!(s, "{:<24} {:>7} {:>7} {:>7}", "method", "h(z)", "h(a)", "h(v)");
        for &v in &self.variants {
            let _ = write!(s, "{:<24}", v.to_string());
            for mode in InputMode::ALL {
                let _ = write!(s, " {}", pct(self.cell(v, ExperimentId::TrainOnJoint, mode), |m| m.accuracy));
            }
            s.push('\n');
        }
        let failures = self.failures();
        if !failures.is_empty() {
            let _ = writeln!(s, "\nfailed runs:");
            for f in failures {
                if let FoldStatus::Failed { error } = &f.status {
                    let _ = writeln!(s, "  {} fold {}: {error}", f.variant, f.fold);
                }
            }
        }
        s
    }

    /// Fold-averaged confusion matrices, one block per cell.
    pub fn confusion_text(&self) -> String {
        let mut s = String::new();
        for c in &self.cells {
            let Some(m) = &c.metrics else { continue };
            let _ = writeln!(s, "{} / {} / test {}", c.variant, c.experiment, c.test_mode);
            let _ = write!(s, "{:>8}", "");
            for name in &self.dataset.class_names {
                let _ = write!(s, " {name:>8}");
            }
            s.push('\n');
            for (name, row) in self.dataset.class_names.iter().zip(&m.confusion) {
                let _ = write!(s, "{name:>8}");
                for v in row {
                    let _ = write!(s, " {v:>8.2}");
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s
    }
}

fn report_notes(cfg: &EvalConfig) -> Vec<String> {
    let mut notes = vec![
        format!(
            "precision/recall/f1 use {} averaging",
            match cfg.averaging {
                Averaging::Weighted => "support-weighted (weighted recall equals accuracy)",
                Averaging::Macro => "macro",
            }
        ),
        "probes are one linear layer trained with softmax cross-entropy".into(),
        format!(
            "autoencoder: batch {}, max {} epochs, patience {}, lr {}, early stopping on {:?}",
            cfg.train.batch_size,
            cfg.train.max_epochs,
            cfg.train.early_stopping_patience,
            cfg.train.adam.learning_rate,
            cfg.train.validation_metric
        ),
        "CorrNet-style: negated summed per-coordinate correlation of the two single-modality codes".into(),
    ];
    if let Some(m) = cfg.train.loss.margin {
        notes.push(format!("contrastive repulsion uses a hinge with margin {m}"));
    }
    notes
}

struct Job {
    variant: Variant,
    fold: usize,
}

/// A fold's trained autoencoder, rebuilt with the same seeds cross-validation uses.
pub struct FoldModel {
    pub model: MultiModalAE,
    pub history: TrainHistory,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Retrains `variant` on fold `fold` exactly as [`cross_validate`] does.
pub fn train_fold(ds: &Dataset, cfg: &EvalConfig, variant: Variant, fold: usize) -> Result<FoldModel, EvalError> {
    let split = split_holdout(ds, cfg.holdout_per_class, cfg.split_seed)?;
    let plan = stratified_folds(ds, &split, cfg.folds, cfg.split_seed)?;
    let f = plan
        .folds
        .get(fold)
        .ok_or_else(|| EvalError::Invalid(format!("fold {fold} out of range ({} folds)", plan.folds.len())))?;
    let (model, history) = fit_fold(ds, cfg, &split.validation, &f.train, &f.test, &Job { variant, fold })?;
    Ok(FoldModel {
        model,
        history,
        train: f.train.clone(),
        test: f.test.clone(),
    })
}

fn fit_fold(
    ds: &Dataset,
    cfg: &EvalConfig,
    validation: &[usize],
    train_idx: &[usize],
    test_idx: &[usize],
    job: &Job,
) -> Result<(MultiModalAE, TrainHistory), EvalError> {
    let train = ds.subset(train_idx);
    let test = ds.subset(test_idx);
    let val = ds.subset(validation);
    check_disjoint(&train, &test, &val)?;
    let model = init_model(&cfg.arch, fold_seed(cfg.model_seed, job.fold))?;
    let tcfg = TrainConfig {
        seed: fold_seed(cfg.train.seed, job.fold),
        loss: LossConfig {
            variant: job.variant,
            ..cfg.train.loss.clone()
        },
        ..cfg.train.clone()
    };
    Ok(train_autoencoder(model, &train, &val, &tcfg)?)
}

fn run_job(
    ds: &Dataset,
    cfg: &EvalConfig,
    validation: &[usize],
    train_idx: &[usize],
    test_idx: &[usize],
    job: &Job,
) -> FoldOutcome {
    let status = (|| -> Result<FoldStatus, EvalError> {
        let (model, history) = fit_fold(ds, cfg, validation, train_idx, test_idx, job)?;
        let reps = FoldRepresentations::new(&model, &ds.subset(train_idx), &ds.subset(test_idx))?;
        let mut cells = Vec::with_capacity(12);
        for exp in ExperimentId::ALL {
            cells.extend(reps.run(exp, ds.n_classes(), &cfg.probe, cfg.averaging)?);
        }
        Ok(FoldStatus::Ok {
            best_epoch: history.best_epoch,
            epochs_run: history.epochs.len(),
            loss: history.loss,
            cells,
        })
    })()
    .unwrap_or_else(|e| FoldStatus::Failed { error: e.to_string() });
    FoldOutcome {
        variant: job.variant,
        fold: job.fold,
        model_seed: fold_seed(cfg.model_seed, job.fold),
        train_seed: fold_seed(cfg.train.seed, job.fold),
        train_size: train_idx.len(),
        test_size: test_idx.len(),
        status,
    }
}

fn check_disjoint(
    train: &[&MultiModalSample],
    test: &[&MultiModalSample],
    validation: &[&MultiModalSample],
) -> Result<(), EvalError> {
    let ids = |set: &[&MultiModalSample]| -> HashSet<String> { set.iter().map(|s| s.id.clone()).collect() };
    let (a, b, c) = (ids(train), ids(test), ids(validation));
    for (x, y, what) in [(&a, &b, "train/test"), (&a, &c, "train/validation"), (&b, &c, "test/validation")] {
        if let Some(id) = x.intersection(y).next() {
            return Err(EvalError::Invalid(format!("{what} leak: sample `{id}` is in both")));
        }
    }
    Ok(())
}

/// Holdout, stratified folds, then per fold and variant: train, probe, score.
/// Fold-averaged cells are arithmetic means over successful folds. Failed
/// runs are recorded in the report rather than aborting the whole run.
///
/// `jobs` sets the worker count; results do not depend on it.
pub fn cross_validate(
    ds: &Dataset,
    variants: &[Variant],
    cfg: &EvalConfig,
    jobs: usize,
    run_config: serde_json::Value,
) -> Result<EvaluationReport, EvalError> {
    cross_validate_with_progress(ds, variants, cfg, jobs, run_config, |_| {})
}

pub fn cross_validate_with_progress<P>(
    ds: &Dataset,
    variants: &[Variant],
    cfg: &EvalConfig,
    jobs: usize,
    run_config: serde_json::Value,
    progress: P,
) -> Result<EvaluationReport, EvalError>
where
    P: Fn(&FoldOutcome) + Sync,
{
    if variants.is_empty() {
        return Err(EvalError::Invalid("no variants requested".into()));
    }
    let mut uniq = variants.to_vec();
    uniq.dedup();
    if uniq.len() != variants.len() || variants.iter().collect::<HashSet<_>>().len() != variants.len() {
        return Err(EvalError::Invalid("variants must be distinct".into()));
    }
    cfg.arch.validate()?;
    cfg.train.validate()?;
    cfg.probe.validate()?;
    ds.validate_for_training()?;
    if ds.signal_length != cfg.arch.signal_length {
        return Err(EvalError::Invalid(format!(
            "dataset signal length {} does not match architecture input {}",
            ds.signal_length, cfg.arch.signal_length
        )));
    }
    let split = split_holdout(ds, cfg.holdout_per_class, cfg.split_seed)?;
    if split.validation.is_empty() {
        return Err(EvalError::Invalid("early stopping needs a non-empty holdout".into()));
    }
    let plan = stratified_folds(ds, &split, cfg.folds, cfg.split_seed)?;
    let leak_free = plan.folds.iter().all(|f| {
        check_disjoint(&ds.subset(&f.train), &ds.subset(&f.test), &ds.subset(&split.validation)).is_ok()
    });
    if !leak_free {
        return Err(EvalError::Invalid("fold plan leaks samples between splits".into()));
    }

    let job_list: Vec<Job> = variants
        .iter()
        .flat_map(|&variant| (0..plan.folds.len()).map(move |fold| Job { variant, fold }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Invalid(e.to_string()))?;
    let outcomes: Vec<FoldOutcome> = pool.install(|| {
        job_list
            .par_iter()
            .map(|job| {
                let f = &plan.folds[job.fold];
                let out = run_job(ds, cfg, &split.validation, &f.train, &f.test, job);
                progress(&out);
                out
            })
            .collect()
    });

    let mut cells = Vec::new();
    for &variant in variants {
        for exp in ExperimentId::ALL {
            for mode in InputMode::ALL {
                let per_fold: Vec<&MetricSet> = outcomes
                    .iter()
                    .filter(|o| o.variant == variant)
                    .filter_map(|o| match &o.status {
                        FoldStatus::Ok { cells, .. } => cells
                            .iter()
                            .find(|c| c.experiment == exp && c.test_mode == mode)
                            .map(|c| &c.metrics),
                        FoldStatus::Failed { .. } => None,
                    })
                    .collect();
                cells.push(CellSummary {
                    variant,
                    experiment: exp,
                    test_mode: mode,
                    folds_ok: per_fold.len(),
                    metrics: average_metrics(&per_fold),
                });
            }
        }
    }
    Ok(EvaluationReport {
        format_version: REPORT_FORMAT_VERSION,
        code_hash: CODE_HASH.to_string(),
        config: cfg.clone(),
        run_config,
        dataset: DatasetSummary::of(ds),
        protocol: ProtocolSummary {
            validation_size: split.validation.len(),
            pool_size: split.pool.len(),
            folds: plan.folds.len(),
            fold_test_sizes: plan.folds.iter().map(|f| f.test.len()).collect(),
            leak_free,
        },
        notes: report_notes(cfg),
        variants: variants.to_vec(),
        folds: outcomes,
        cells,
    })
}
