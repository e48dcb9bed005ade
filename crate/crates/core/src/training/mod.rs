//! Autoencoder training (mini-batch ADAM with early stopping on a held-out
//! set) and linear probes on frozen representations.

mod classifier;

pub use classifier::{train_classifier, ClassifierConfig, LinearClassifier, ProbeSource};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;
use thiserror::Error;

use crate::model::{InputMode, LatentBatch, ModelError, MultiModalAE, MultiModalSample};
use crate::nn::{AdamConfig, NnError};
use crate::objective::{calibrate, corrupt, evaluate, LossBreakdown, LossConfig, ObjectiveError, SignalBatch};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} is empty")]
    EmptySet(&'static str),
    #[error("batch size {batch} exceeds the {train} training samples")]
    BatchTooLarge { batch: usize, train: usize },
    #[error("sample `{0}` is in both the training and validation sets")]
    Overlap(String),
    #[error("classifier needs at least 2 classes in its training data")]
    SingleClass,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    /// The training objective on clean validation inputs, per sample.
    #[default]
    ValLoss,
    /// Joint-mode probe accuracy on the validation set (negated, so lower is better).
    ValAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stopping_patience: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub seed: u64,
    pub validation_metric: ValidationMetric,
    /// Probe settings used by the accuracy metric.
    pub probe: ClassifierConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 300,
            early_stopping_patience: 20,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
            validation_metric: ValidationMetric::ValLoss,
            probe: ClassifierConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.early_stopping_patience < 1 {
            return Err(TrainError::InvalidConfig("early_stopping_patience must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(TrainError::InvalidConfig("max_epochs must be >= 1".into()));
        }
        self.adam.validate()?;
        self.loss.validate()?;
        self.probe.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-sample mean of each term over the epoch's batches.
    pub train: LossBreakdown,
    /// Lower is better.
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
    /// Loss settings after weight calibration.
    pub loss: LossConfig,
    pub wall_clock_seconds: f64,
}

impl TrainHistory {
    /// Tab-separated table, one row per epoch, preceded by `#` comment lines
    /// echoing the run settings.
    pub fn to_tsv(&self, cfg: &TrainConfig) -> String {
        let mut s = String::new();
        let settings = TrainConfig {
            loss: self.loss.clone(),
            ..cfg.clone()
        };
        let _ = writeln!(
            s,
            "# train_config {}",
            serde_json::to_string(&settings).unwrap_or_default()
        );
        let _ = writeln!(s, "# best_epoch {}", self.best_epoch);
        s.push_str("epoch\tj1_self\tj1_cross_a\tj1_cross_v\tj2\tj3\tcorr\ttotal\tval_metric\n");
        for e in &self.epochs {
            let t = &e.train;
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.epoch, t.j1_self, t.j1_cross_a, t.j1_cross_v, t.j2, t.j3, t.corr, t.total, e.val_metric
            );
        }
        s
    }

    /// Everything except the wall clock, for reproducibility checks.
    pub fn same_run(&self, other: &TrainHistory) -> bool {
        self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.best_metric.to_bits() == other.best_metric.to_bits()
            && self.stopped_early == other.stopped_early
            && self.loss == other.loss
    }
}

/// Rows per chunk when scoring the validation set.
const VALIDATION_CHUNK: usize = 128;

/// The training objective on clean inputs, averaged per sample.
pub fn validation_loss(
    model: &mut MultiModalAE,
    samples: &[&MultiModalSample],
    loss: &LossConfig,
) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySet("validation set"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(VALIDATION_CHUNK) {
        let batch = SignalBatch::from_samples(chunk, model.signal_length())?;
        total += evaluate(model, &batch, &batch, loss, false)?.total;
    }
    Ok(total / samples.len() as f64)
}

/// Frozen-model representations of clean inputs; decoders are not run.
pub fn extract_representations(
    model: &MultiModalAE,
    samples: &[&MultiModalSample],
    mode: InputMode,
) -> Result<LatentBatch, TrainError> {
    Ok(model.encode(samples, mode)?)
}

fn probe_accuracy(
    model: &MultiModalAE,
    train: &[&MultiModalSample],
    validation: &[&MultiModalSample],
    cfg: &ClassifierConfig,
) -> Result<f64, TrainError> {
    let reps = extract_representations(model, train, InputMode::Joint)?;
    let n_classes = train.iter().chain(validation).map(|s| s.label + 1).max().unwrap_or(0);
    let clf = train_classifier(&[&reps], n_classes, cfg)?;
    let val = extract_representations(model, validation, InputMode::Joint)?;
    let pred = clf.predict(&val.codes)?;
    let hits = pred.iter().zip(&val.labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / validation.len() as f64)
}

/// Trains with the configured validation metric.
pub fn train_autoencoder(
    model: MultiModalAE,
    train: &[&MultiModalSample],
    validation: &[&MultiModalSample],
    cfg: &TrainConfig,
) -> Result<(MultiModalAE, TrainHistory), TrainError> {
    let metric = cfg.validation_metric;
    let probe = cfg.probe.clone();
    train_autoencoder_with_metric(model, train, validation, cfg, |m, loss| match metric {
        ValidationMetric::ValLoss => validation_loss(m, validation, loss),
        ValidationMetric::ValAccuracy => Ok(-probe_accuracy(m, train, validation, &probe)?),
    })
}

/// Training loop with a caller-supplied validation metric (lower is better),
/// evaluated after every epoch with the calibrated loss settings.
///
/// Stops when the metric has not improved for `early_stopping_patience`
/// epochs or after `max_epochs`, and returns the best epoch's parameters.
pub fn train_autoencoder_with_metric<F>(
    mut model: MultiModalAE,
    train: &[&MultiModalSample],
    validation: &[&MultiModalSample],
    cfg: &TrainConfig,
    mut metric: F,
) -> Result<(MultiModalAE, TrainHistory), TrainError>
where
    F: FnMut(&mut MultiModalAE, &LossConfig) -> Result<f64, TrainError>,
{
    let started = Instant::now();
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySet("training set"));
    }
    if validation.is_empty() {
        return Err(TrainError::EmptySet("validation set"));
    }
    if cfg.batch_size > train.len() {
        return Err(TrainError::BatchTooLarge {
            batch: cfg.batch_size,
            train: train.len(),
        });
    }
    let train_ids: HashSet<&str> = train.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = validation.iter().find(|s| train_ids.contains(s.id.as_str())) {
        return Err(TrainError::Overlap(s.id.clone()));
    }
    let l = model.signal_length();
    for s in train.iter().chain(validation) {
        s.validate(l)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss = cfg.loss.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut seen = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            // contrastive pairs need two samples
            if idx.len() < 2 {
                continue;
            }
            let rows: Vec<&MultiModalSample> = idx.iter().map(|&i| train[i]).collect();
            let clean = SignalBatch::from_samples(&rows, l)?;
            let noisy = corrupt(&clean, &loss, &mut rng);
            if !loss.is_calibrated() {
                loss = calibrate(&mut model, &clean, &noisy, &loss)?;
            }
            model.store_mut().zero_grad();
            let b = evaluate(&mut model, &clean, &noisy, &loss, true)?;
            if !b.is_finite() {
                return Err(TrainError::Diverged(format!("non-finite loss in epoch {epoch}")));
            }
            model.store_mut().adam_update(&cfg.adam)?;
            sum.add(&b);
            seen += rows.len();
        }
        let value = metric(&mut model, &loss)?;
        if !value.is_finite() {
            return Err(TrainError::Diverged(format!("non-finite validation metric in epoch {epoch}")));
        }
        epochs.push(EpochRecord {
            epoch,
            train: sum.scaled(1.0 / seen.max(1) as f64),
            val_metric: value,
        });
        match &best {
            Some((_, b, _)) if value >= *b => {}
            _ => best = Some((epoch, value, model.store().snapshot())),
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= cfg.early_stopping_patience {
            stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }
    model.store_mut().zero_grad();
    let (best_epoch, best_metric, snapshot) = best.expect("at least one epoch ran");
    model.store_mut().restore(&snapshot)?;
    let history = TrainHistory {
        epochs,
        best_epoch,
        best_metric,
        stopped_early,
        loss,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, history))
}
