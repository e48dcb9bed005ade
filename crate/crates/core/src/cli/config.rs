use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::data::{Precision, RecordingConfig, SegmentConfig, SyntheticConfig};
use crate::evaluation::{Averaging, EvalConfig};
use crate::model::{ArchConfig, ArchPreset};
use crate::objective::Variant;
use crate::training::{ClassifierConfig, TrainConfig};

/// Either a preset name (`"paper"`, `"compact"`, `"mini"`) or a full layer table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchChoice {
    Preset(ArchPreset),
    Custom(ArchConfig),
}

impl ArchChoice {
    pub fn resolve(&self) -> ArchConfig {
        match self {
            ArchChoice::Preset(p) => p.config(),
            ArchChoice::Custom(c) => c.clone(),
        }
    }
}

/// Every setting of a run. All keys are optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    /// Seeds splitting, initialisation and training.
    pub seed: u64,
    pub jobs: usize,
    pub variants: Vec<Variant>,
    pub arch: ArchChoice,
    pub holdout_per_class: usize,
    pub folds: usize,
    pub averaging: Averaging,
    pub precision: Precision,
    pub outlier_z: f64,
    pub band_cutoff_hz: Option<f64>,
    pub synthetic: SyntheticConfig,
    pub recordings: RecordingConfig,
    pub segment: SegmentConfig,
    pub train: TrainConfig,
    pub probe: ClassifierConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("out"),
            seed: 0,
            jobs: 1,
            variants: Variant::ALL.to_vec(),
            arch: ArchChoice::Preset(ArchPreset::Paper),
            holdout_per_class: 10,
            folds: 7,
            averaging: Averaging::Weighted,
            precision: Precision::F64,
            outlier_z: 3.5,
            band_cutoff_hz: None,
            synthetic: SyntheticConfig::default(),
            recordings: RecordingConfig::default(),
            segment: SegmentConfig::default(),
            train: TrainConfig::default(),
            probe: ClassifierConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            arch: self.arch.resolve(),
            holdout_per_class: self.holdout_per_class,
            folds: self.folds,
            split_seed: self.seed,
            model_seed: self.seed,
            train: TrainConfig {
                seed: self.seed.wrapping_add(1),
                ..self.train.clone()
            },
            probe: self.probe.clone(),
            averaging: self.averaging,
        };
        cfg.arch.validate()?;
        Ok(cfg)
    }

    /// The effective configuration as embedded in artifacts. Non-finite
    /// numbers (an `inf` outlier threshold) are written as strings.
    pub fn echo(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if !self.outlier_z.is_finite() {
            v["outlier_z"] = serde_json::Value::String(self.outlier_z.to_string());
        }
        Ok(v)
    }

    pub fn echo_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.echo()?)?)
    }
}
