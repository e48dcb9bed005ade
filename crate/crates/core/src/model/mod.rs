//! Two-modality autoencoder: one encoder per modality, a shared fusion layer
//! producing the common representation, and one decoder per modality.
//!
//! Three input-passing modes exist. `Joint` feeds both signals; `SingleA` and
//! `SingleV` feed one signal and an exact zero vector to the other encoder.
//! All three modes go through the same fusion parameters, so their codes live
//! in one space.

mod arch;
mod checkpoint;

pub use arch::{ArchConfig, ArchPreset, ConvStage};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::nn::{NnError, ParameterStore, Stack, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("inconsistent architecture: {network} layer {layer}: {reason}")]
    Arch {
        network: &'static str,
        layer: usize,
        reason: String,
    },
    #[error("signal length {found} does not match the model's {expected}")]
    SignalLength { expected: usize, found: usize },
    #[error("latent width {found} does not match the model's {expected}")]
    LatentWidth { expected: usize, found: usize },
    #[error("sample `{id}` contains non-finite values")]
    NonFinite { id: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// One labelled pair of equally long signals: acoustic (`a`) and vibration (`v`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModalSample {
    pub id: String,
    pub label: usize,
    pub acoustic: Vec<f64>,
    pub vibration: Vec<f64>,
}

impl MultiModalSample {
    pub fn signal(&self, modality: Modality) -> &[f64] {
        match modality {
            Modality::Acoustic => &self.acoustic,
            Modality::Vibration => &self.vibration,
        }
    }

    pub fn validate(&self, signal_length: usize) -> Result<(), ModelError> {
        for s in [&self.acoustic, &self.vibration] {
            if s.len() != signal_length {
                return Err(ModelError::SignalLength {
                    expected: signal_length,
                    found: s.len(),
                });
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFinite {
                    id: self.id.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Acoustic,
    Vibration,
}

/// How a sample is presented to the encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `h(z)`: both modalities.
    Joint,
    /// `h(a)`: acoustic only; the vibration encoder sees zeros.
    SingleA,
    /// `h(v)`: vibration only; the acoustic encoder sees zeros.
    SingleV,
}

impl InputMode {
    pub const ALL: [InputMode; 3] = [InputMode::Joint, InputMode::SingleA, InputMode::SingleV];

    pub fn short(self) -> &'static str {
        match self {
            InputMode::Joint => "z",
            InputMode::SingleA => "a",
            InputMode::SingleV => "v",
        }
    }

    pub fn uses(self, modality: Modality) -> bool {
        !matches!(
            (self, modality),
            (InputMode::SingleA, Modality::Vibration) | (InputMode::SingleV, Modality::Acoustic)
        )
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h({})", self.short())
    }
}

impl std::str::FromStr for InputMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" | "z" => Ok(Self::Joint),
            "a" | "single_a" | "acoustic" => Ok(Self::SingleA),
            "v" | "single_v" | "vibration" => Ok(Self::SingleV),
            other => Err(format!("unknown input mode `{other}` (expected joint|a|v)")),
        }
    }
}

/// Matrix of common representations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub codes: Tensor,
    pub mode: InputMode,
    pub labels: Vec<usize>,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.codes.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.codes.row_len()
    }
}

/// The five sub-networks; their parameters live in the model's store.
#[derive(Debug, Clone)]
pub struct Networks {
    pub encoder_a: Stack,
    pub encoder_v: Stack,
    pub fusion: Stack,
    pub decoder_a: Stack,
    pub decoder_v: Stack,
}

impl Networks {
    pub fn encoder(&self, m: Modality) -> &Stack {
        match m {
            Modality::Acoustic => &self.encoder_a,
            Modality::Vibration => &self.encoder_v,
        }
    }

    pub fn decoder(&self, m: Modality) -> &Stack {
        match m {
            Modality::Acoustic => &self.decoder_a,
            Modality::Vibration => &self.decoder_v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiModalAE {
    arch: ArchConfig,
    nets: Networks,
    store: ParameterStore,
}

/// Rows per inference chunk; keeps activation memory bounded on long signals.
const INFER_CHUNK: usize = 64;

/// Builds a seeded model after checking the architecture against the shape algebra.
pub fn init_model(arch: &ArchConfig, seed: u64) -> Result<MultiModalAE, ModelError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let enc = arch.encoder_layers();
    let dec = arch.decoder_layers();
    let nets = Networks {
        encoder_a: Stack::build("encoder_a", arch.encoder_input(), enc.clone(), &mut store, &mut rng)?,
        encoder_v: Stack::build("encoder_v", arch.encoder_input(), enc, &mut store, &mut rng)?,
        fusion: Stack::build("fusion", arch.fusion_input(), arch.fusion_layers(), &mut store, &mut rng)?,
        decoder_a: Stack::build("decoder_a", arch.decoder_input(), dec.clone(), &mut store, &mut rng)?,
        decoder_v: Stack::build("decoder_v", arch.decoder_input(), dec, &mut store, &mut rng)?,
    };
    Ok(MultiModalAE {
        arch: arch.clone(),
        nets,
        store,
    })
}

impl MultiModalAE {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn signal_length(&self) -> usize {
        self.arch.signal_length
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn nets(&self) -> &Networks {
        &self.nets
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// Disjoint borrows for training code: read-only networks, mutable parameters.
    pub fn parts_mut(&mut self) -> (&Networks, &mut ParameterStore) {
        (&self.nets, &mut self.store)
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn signal_tensor<'a, I>(&self, rows: I) -> Result<Tensor, ModelError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let l = self.arch.signal_length;
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if let Some(bad) = rows.iter().find(|r| r.len() != l) {
            return Err(ModelError::SignalLength {
                expected: l,
                found: bad.len(),
            });
        }
        Ok(Tensor::from_signals(rows, l)?)
    }

    /// Encoder output for an all-zero signal (one row).
    pub fn zero_code(&self, modality: Modality) -> Result<Tensor, ModelError> {
        let zeros = Tensor::zeros(&[1, 1, self.arch.signal_length]);
        Ok(self.nets.encoder(modality).infer(&self.store, &zeros)?)
    }

    /// Fusion over per-row encoder codes. `None` means the modality is masked.
    fn fuse(&self, code_a: &Tensor, code_v: &Tensor, n: usize) -> Result<Tensor, ModelError> {
        let e = self.arch.encoder_width;
        let mut input = Tensor::zeros(&[n, 2 * e]);
        for i in 0..n {
            let ra = if code_a.batch() == 1 { 0 } else { i };
            let rv = if code_v.batch() == 1 { 0 } else { i };
            let row = input.row_mut(i);
            row[..e].copy_from_slice(code_a.row(ra));
            row[e..].copy_from_slice(code_v.row(rv));
        }
        Ok(self.nets.fusion.infer(&self.store, &input)?)
    }

    /// Common representation of raw signal rows under `mode`.
    ///
    /// Masked modalities may be passed as `None`; in joint mode both are required.
    pub fn encode_signals(
        &self,
        acoustic: Option<&[&[f64]]>,
        vibration: Option<&[&[f64]]>,
        mode: InputMode,
    ) -> Result<Tensor, ModelError> {
        let n = match (mode, acoustic, vibration) {
            (InputMode::Joint, Some(a), Some(v)) if a.len() == v.len() => a.len(),
            (InputMode::SingleA, Some(a), _) => a.len(),
            (InputMode::SingleV, _, Some(v)) => v.len(),
            _ => return Err(ModelError::EmptyBatch),
        };
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let zero_a = if mode.uses(Modality::Acoustic) {
            None
        } else {
            Some(self.zero_code(Modality::Acoustic)?)
        };
        let zero_v = if mode.uses(Modality::Vibration) {
            None
        } else {
            Some(self.zero_code(Modality::Vibration)?)
        };
        let mut out = Vec::with_capacity(n * self.arch.latent_dim);
        for start in (0..n).step_by(INFER_CHUNK) {
            let end = (start + INFER_CHUNK).min(n);
            let code = |m: Modality, rows: Option<&[&[f64]]>, zero: &Option<Tensor>| -> Result<Tensor, ModelError> {
                match zero {
                    Some(z) => Ok(z.clone()),
                    None => {
                        let rows = rows.expect("checked above");
                        let x = self.signal_tensor(rows[start..end].iter().copied())?;
                        Ok(self.nets.encoder(m).infer(&self.store, &x)?)
                    }
                }
            };
            let ca = code(Modality::Acoustic, acoustic, &zero_a)?;
            let cv = code(Modality::Vibration, vibration, &zero_v)?;
            out.extend_from_slice(self.fuse(&ca, &cv, end - start)?.data());
        }
        Ok(Tensor::from_vec(&[n, self.arch.latent_dim], out)?)
    }

    /// `h(z)`, `h(a)` or `h(v)` for a batch of samples. Decoders are not run and
    /// no corruption is applied.
    pub fn encode(&self, samples: &[&MultiModalSample], mode: InputMode) -> Result<LatentBatch, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for s in samples {
            for m in [Modality::Acoustic, Modality::Vibration] {
                if mode.uses(m) && s.signal(m).len() != self.arch.signal_length {
                    return Err(ModelError::SignalLength {
                        expected: self.arch.signal_length,
                        found: s.signal(m).len(),
                    });
                }
            }
        }
        let a: Vec<&[f64]> = samples.iter().map(|s| s.acoustic.as_slice()).collect();
        let v: Vec<&[f64]> = samples.iter().map(|s| s.vibration.as_slice()).collect();
        let codes = self.encode_signals(Some(&a), Some(&v), mode)?;
        Ok(LatentBatch {
            codes,
            mode,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    /// Runs both decoders on the same codes; returns `([N, 1, L], [N, 1, L])`.
    pub fn decode(&self, codes: &Tensor) -> Result<(Tensor, Tensor), ModelError> {
        let d = self.arch.latent_dim;
        if codes.shape().len() != 2 || codes.row_len() != d {
            return Err(ModelError::LatentWidth {
                expected: d,
                found: codes.row_len(),
            });
        }
        if codes.batch() == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let mut ra = Vec::new();
        let mut rv = Vec::new();
        let n = codes.batch();
        for start in (0..n).step_by(INFER_CHUNK) {
            let rows: Vec<usize> = (start..(start + INFER_CHUNK).min(n)).collect();
            let chunk = codes.select_rows(&rows);
            ra.extend(self.nets.decoder_a.infer(&self.store, &chunk)?.into_data());
            rv.extend(self.nets.decoder_v.infer(&self.store, &chunk)?.into_data());
        }
        let dims = [n, 1, self.arch.signal_length];
        Ok((Tensor::from_vec(&dims, ra)?, Tensor::from_vec(&dims, rv)?))
    }
}
