//! Two-modality datasets: synthetic generation, segmentation of raw engine
//! recordings by a crank trigger channel, outlier removal, holdout/fold
//! splitting and the on-disk container.

mod io;
mod outliers;
mod segment;
mod split;
mod synthetic;

pub use io::{
    decode_dataset, encode_dataset, export_directory, import_directory, read_dataset, read_recordings_dir, read_signal,
    write_dataset, write_recordings_dir, write_signal, Precision,
};
pub use outliers::{remove_outliers, OutlierReport, RejectedSample};
pub use segment::{
    detect_revolutions, segment_recording, synthesize_recording, RawRecording, RecordingConfig, SegmentConfig,
    SegmentReport,
};
pub use split::{split_holdout, stratified_folds, Fold, FoldPlan, HoldoutSplit};
pub use synthetic::{class_names, generate_synthetic, SyntheticConfig, WINDOW_SECONDS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::model::MultiModalSample;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("recording `{id}`: found {found} revolution marks, need at least 3")]
    TooFewTriggers { id: String, found: usize },
    #[error("recording `{id}`: irregular trigger spacing at mark {index} ({interval} samples vs median {median})")]
    IrregularTriggers {
        id: String,
        index: usize,
        interval: usize,
        median: usize,
    },
    #[error("recording `{id}`: channels have different lengths ({acoustic}, {vibration}, {trigger})")]
    ChannelLength {
        id: String,
        acoustic: usize,
        vibration: usize,
        trigger: usize,
    },
    #[error("class `{class}` has {have} samples, need {need}")]
    InsufficientClass { class: String, have: usize, need: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("dataset file: {0}")]
    Format(String),
    #[error("checksum mismatch for sample `{id}`")]
    Checksum { id: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceKind {
    Synthetic,
    Segmented,
    Imported,
}

/// How a dataset came to be, with the generating configuration echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: ProvenanceKind,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<MultiModalSample>,
    pub class_names: Vec<String>,
    pub signal_length: usize,
    /// Samples per second of the (length-normalised) signals.
    pub sample_rate: f64,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&MultiModalSample> {
        indices.iter().map(|&i| &self.samples[i]).collect()
    }

    /// Structural checks: lengths, labels, finiteness and unique ids.
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(DataError::Invalid(format!("sample rate {}", self.sample_rate)));
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.samples {
            if s.label >= self.class_names.len() {
                return Err(DataError::Invalid(format!(
                    "sample `{}` has label {} but only {} classes exist",
                    s.id,
                    s.label,
                    self.class_names.len()
                )));
            }
            s.validate(self.signal_length)
                .map_err(|e| DataError::Invalid(format!("sample `{}`: {e}", s.id)))?;
            if !ids.insert(s.id.as_str()) {
                return Err(DataError::Invalid(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(())
    }

    /// Requirements for any training use: two classes with two samples each.
    pub fn validate_for_training(&self) -> Result<(), DataError> {
        self.validate()?;
        if self.class_names.len() < 2 {
            return Err(DataError::Invalid("at least 2 classes are required".into()));
        }
        for (c, n) in self.class_counts().into_iter().enumerate() {
            if n < 2 {
                return Err(DataError::InsufficientClass {
                    class: self.class_names[c].clone(),
                    have: n,
                    need: 2,
                });
            }
        }
        Ok(())
    }
}

/// Zero mean, unit variance. Constant signals are only centred.
pub fn standardize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter_mut().for_each(|v| *v -= mean);
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    if var > 0.0 {
        let inv = 1.0 / var.sqrt();
        x.iter_mut().for_each(|v| *v *= inv);
    }
    // a second centring pass removes the rounding residue of the first
    let mean = x.iter().sum::<f64>() / n;
    x.iter_mut().for_each(|v| *v -= mean);
}

/// Everything `ingest_recordings` did, for the ingest report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub segmentation: Vec<SegmentReport>,
    pub outliers: OutlierReport,
}

/// Segments every recording, screens outliers on the raw windows and then
/// standardises each kept signal.
pub fn ingest_recordings(
    class_names: Vec<String>,
    recordings: &[RawRecording],
    segment: &SegmentConfig,
    outlier_z: f64,
) -> Result<(Dataset, IngestReport), DataError> {
    if recordings.is_empty() {
        return Err(DataError::Invalid("no recordings to ingest".into()));
    }
    let rate = recordings[0].sample_rate;
    if let Some(r) = recordings.iter().find(|r| r.sample_rate != rate) {
        return Err(DataError::Invalid(format!(
            "recording `{}` has sample rate {} but `{}` has {rate}",
            r.id, r.sample_rate, recordings[0].id
        )));
    }
    let mut windows = Vec::new();
    let mut segmentation = Vec::with_capacity(recordings.len());
    let mut raw_lengths = Vec::new();
    for rec in recordings {
        let (w, report) = segment_recording(rec, segment)?;
        raw_lengths.push(0.5 * (report.min_raw_length + report.max_raw_length) as f64);
        windows.extend(w);
        segmentation.push(report);
    }
    let (mut kept, outliers) = remove_outliers(windows, outlier_z);
    for s in &mut kept {
        standardize(&mut s.acoustic);
        standardize(&mut s.vibration);
    }
    // resampling maps one mean-length window onto `signal_length` samples
    let mean_raw = raw_lengths.iter().sum::<f64>() / raw_lengths.len() as f64;
    let ds = Dataset {
        samples: kept,
        class_names,
        signal_length: segment.signal_length,
        sample_rate: rate * segment.signal_length as f64 / mean_raw,
        provenance: Provenance {
            kind: ProvenanceKind::Segmented,
            config: serde_json::json!({ "segment": segment, "outlier_z": outlier_z.to_string() }),
        },
    };
    ds.validate()?;
    Ok((
        ds,
        IngestReport {
            segmentation,
            outliers,
        },
    ))
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[cfg(test)]
mod tests;
