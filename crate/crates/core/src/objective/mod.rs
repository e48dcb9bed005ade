//! Training objectives: denoising self/cross reconstruction, the supervised
//! contrastive terms, their weighted combination and three baselines.
//!
//! Every batch is evaluated through up to three input modes (joint, acoustic
//! only, vibration only) on noise-corrupted signals, with clean signals as the
//! reconstruction targets. Gradients of `total / N` are accumulated into the
//! model's parameter store.

mod contrastive;

pub use contrastive::{
    correlation_term, indicator, joint_contrastive, joint_contrastive_grad, pair_sum, single_contrastive,
    single_contrastive_grad, smoothed_distance, PairGrads, DISTANCE_EPS,
};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::model::{InputMode, Modality, ModelError, MultiModalAE, MultiModalSample};
use crate::nn::{NnError, Tensor};

/// Guards the auto-calibrated weights against a vanishing contrastive term.
const CALIBRATION_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("clean and corrupted batches are misaligned: {0}")]
    Misaligned(String),
    #[error("objective variant {found} cannot be evaluated by {op}")]
    VariantMismatch { op: &'static str, found: Variant },
    #[error("`{0}` has not been calibrated")]
    Uncalibrated(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Self/cross reconstruction plus both contrastive terms.
    Proposed,
    /// Self/cross reconstruction only.
    #[serde(alias = "vanilla")]
    VanillaMissing,
    /// Joint reconstruction plus the joint contrastive term; no missing-modality training.
    #[serde(alias = "no-missing")]
    ContrastiveNoMissing,
    /// Self/cross reconstruction minus the summed code correlation of the two single modes.
    #[serde(alias = "corrnet")]
    CorrNetStyle,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Proposed,
        Variant::VanillaMissing,
        Variant::ContrastiveNoMissing,
        Variant::CorrNetStyle,
    ];

    pub fn short(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::VanillaMissing => "vanilla",
            Variant::ContrastiveNoMissing => "no-missing",
            Variant::CorrNetStyle => "corrnet",
        }
    }

    /// Whether training feeds the single-modality modes at all.
    pub fn trains_missing_modes(self) -> bool {
        self != Variant::ContrastiveNoMissing
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Proposed => "Proposed",
            Variant::VanillaMissing => "VanillaMissing",
            Variant::ContrastiveNoMissing => "ContrastiveNoMissing",
            Variant::CorrNetStyle => "CorrNet-style",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => Ok(Variant::Proposed),
            "vanilla" | "vanilla-missing" | "vanillamissing" => Ok(Variant::VanillaMissing),
            "no-missing" | "contrastive-no-missing" | "contrastivenomissing" => Ok(Variant::ContrastiveNoMissing),
            "corrnet" | "corrnet-style" | "corrnetstyle" => Ok(Variant::CorrNetStyle),
            other => Err(format!(
                "unknown variant `{other}` (expected proposed, vanilla, no-missing or corrnet)"
            )),
        }
    }
}

/// All objective scalars. `None` weights are auto-calibrated on the first
/// training batch (see [`calibrate`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub delta1: f64,
    pub delta2: f64,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub alpha1: Option<f64>,
    pub corr_weight: f64,
    pub noise_low: f64,
    pub noise_high: f64,
    pub margin: Option<f64>,
    pub variant: Variant,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            delta1: 1.0,
            delta2: 1.0,
            lambda1: None,
            lambda2: None,
            alpha1: None,
            corr_weight: 1.0,
            noise_low: -0.05,
            noise_high: 0.05,
            margin: None,
            variant: Variant::Proposed,
        }
    }
}

impl LossConfig {
    pub fn for_variant(variant: Variant) -> Self {
        LossConfig {
            variant,
            ..Default::default()
        }
    }

    /// All weights fixed; handy for tests and reconstruction-only runs.
    pub fn fixed(variant: Variant, lambda1: f64, lambda2: f64, alpha1: f64) -> Self {
        LossConfig {
            lambda1: Some(lambda1),
            lambda2: Some(lambda2),
            alpha1: Some(alpha1),
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |m: String| Err(ObjectiveError::InvalidConfig(m));
        let scalars = [
            ("delta1", Some(self.delta1)),
            ("delta2", Some(self.delta2)),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("alpha1", self.alpha1),
            ("corr_weight", Some(self.corr_weight)),
            ("margin", self.margin),
        ];
        for (name, v) in scalars {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return bad(format!("{name} must be finite and non-negative, got {v}"));
                }
            }
        }
        if !self.noise_low.is_finite() || !self.noise_high.is_finite() {
            return bad("noise bounds must be finite".into());
        }
        if self.noise_low > self.noise_high {
            return bad(format!(
                "noise_low {} exceeds noise_high {}",
                self.noise_low, self.noise_high
            ));
        }
        Ok(())
    }

    pub fn is_calibrated(&self) -> bool {
        self.lambda1.is_some() && self.lambda2.is_some() && self.alpha1.is_some()
    }

    fn weight(&self, v: Option<f64>, name: &'static str) -> Result<f64, ObjectiveError> {
        v.ok_or(ObjectiveError::Uncalibrated(name))
    }
}

/// Per-term values of one evaluation. Reconstruction and contrastive terms are
/// batch sums; `total` is the variant's weighted combination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub j1_self: f64,
    pub j1_cross_a: f64,
    pub j1_cross_v: f64,
    pub j2: f64,
    pub j3: f64,
    /// Negated summed correlation; only evaluated for the CorrNet-style variant.
    pub corr: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            j1_self: self.j1_self * s,
            j1_cross_a: self.j1_cross_a * s,
            j1_cross_v: self.j1_cross_v * s,
            j2: self.j2 * s,
            j3: self.j3 * s,
            corr: self.corr * s,
            total: self.total * s,
        }
    }

    pub fn add(&mut self, o: &LossBreakdown) {
        self.j1_self += o.j1_self;
        self.j1_cross_a += o.j1_cross_a;
        self.j1_cross_v += o.j1_cross_v;
        self.j2 += o.j2;
        self.j3 += o.j3;
        self.corr += o.corr;
        self.total += o.total;
    }

    pub fn is_finite(&self) -> bool {
        [
            self.j1_self,
            self.j1_cross_a,
            self.j1_cross_v,
            self.j2,
            self.j3,
            self.corr,
            self.total,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// Signals of a mini-batch as `[N, 1, L]` tensors plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    pub acoustic: Tensor,
    pub vibration: Tensor,
    pub labels: Vec<usize>,
}

impl SignalBatch {
    pub fn from_samples(samples: &[&MultiModalSample], signal_length: usize) -> Result<Self, ObjectiveError> {
        if samples.is_empty() {
            return Err(ObjectiveError::EmptyBatch);
        }
        for s in samples {
            s.validate(signal_length)?;
        }
        Ok(SignalBatch {
            acoustic: Tensor::from_signals(samples.iter().map(|s| s.acoustic.as_slice()), signal_length)?,
            vibration: Tensor::from_signals(samples.iter().map(|s| s.vibration.as_slice()), signal_length)?,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn signal(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Acoustic => &self.acoustic,
            Modality::Vibration => &self.vibration,
        }
    }
}

/// Adds independent uniform(noise_low, noise_high) noise to every signal element.
pub fn corrupt<R: Rng + ?Sized>(batch: &SignalBatch, cfg: &LossConfig, rng: &mut R) -> SignalBatch {
    let mut out = batch.clone();
    if cfg.noise_low == cfg.noise_high {
        if cfg.noise_low != 0.0 {
            for t in [&mut out.acoustic, &mut out.vibration] {
                t.data_mut().iter_mut().for_each(|x| *x += cfg.noise_low);
            }
        }
        return out;
    }
    let dist = Uniform::new(cfg.noise_low, cfg.noise_high).expect("validated bounds");
    for t in [&mut out.acoustic, &mut out.vibration] {
        t.data_mut().iter_mut().for_each(|x| *x += dist.sample(rng));
    }
    out
}

fn check_aligned(model: &MultiModalAE, clean: &SignalBatch, noisy: &SignalBatch) -> Result<(), ObjectiveError> {
    if clean.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    if clean.len() != noisy.len() {
        return Err(ObjectiveError::Misaligned(format!(
            "{} clean vs {} corrupted samples",
            clean.len(),
            noisy.len()
        )));
    }
    if clean.labels != noisy.labels {
        return Err(ObjectiveError::Misaligned("labels differ".into()));
    }
    let want = [clean.len(), 1, model.signal_length()];
    for (what, t) in [
        ("clean acoustic", &clean.acoustic),
        ("clean vibration", &clean.vibration),
        ("corrupted acoustic", &noisy.acoustic),
        ("corrupted vibration", &noisy.vibration),
    ] {
        if t.shape() != want {
            return Err(ObjectiveError::Misaligned(format!(
                "{what} has shape {:?}, expected {want:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Evaluates the configured variant on a corrupted batch against clean targets.
///
/// With `with_grad`, the gradient of `total / N` is added to the store's
/// gradient buffers (they are not zeroed first).
pub fn evaluate(
    model: &mut MultiModalAE,
    clean: &SignalBatch,
    noisy: &SignalBatch,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<LossBreakdown, ObjectiveError> {
    cfg.validate()?;
    check_aligned(model, clean, noisy)?;
    let variant = cfg.variant;
    let (lambda1, lambda2, alpha1) = match variant {
        Variant::Proposed => (cfg.weight(cfg.lambda1, "lambda1")?, cfg.weight(cfg.lambda2, "lambda2")?, 0.0),
        Variant::ContrastiveNoMissing => (0.0, 0.0, cfg.weight(cfg.alpha1, "alpha1")?),
        _ => (0.0, 0.0, 0.0),
    };
    let n = clean.len();
    let len = model.signal_length();
    let scale = 1.0 / n as f64;
    let modes: &[InputMode] = if variant.trains_missing_modes() {
        &InputMode::ALL
    } else {
        &[InputMode::Joint]
    };
    let masked = modes.len() > 1;
    let (nets, store) = model.parts_mut();

    // encoders: real corrupted inputs plus, when needed, one zero-input row each
    let zeros = Tensor::zeros(&[1, 1, len]);
    let enc_a = nets.encoder_a.forward(store, &noisy.acoustic)?;
    let enc_v = nets.encoder_v.forward(store, &noisy.vibration)?;
    let zero_a = masked.then(|| nets.encoder_a.forward(store, &zeros)).transpose()?;
    let zero_v = masked.then(|| nets.encoder_v.forward(store, &zeros)).transpose()?;
    let e = enc_a.output().row_len();

    let rows = modes.len() * n;
    let mut fusion_in = Tensor::zeros(&[rows, 2 * e]);
    for (p, mode) in modes.iter().enumerate() {
        for i in 0..n {
            let ca = if mode.uses(Modality::Acoustic) {
                enc_a.output().row(i)
            } else {
                zero_a.as_ref().expect("masked").output().row(0)
            };
            let cv = if mode.uses(Modality::Vibration) {
                enc_v.output().row(i)
            } else {
                zero_v.as_ref().expect("masked").output().row(0)
            };
            let row = fusion_in.row_mut(p * n + i);
            row[..e].copy_from_slice(ca);
            row[e..].copy_from_slice(cv);
        }
    }
    let fusion = nets.fusion.forward(store, &fusion_in)?;
    let codes = fusion.output();
    let dec_a = nets.decoder_a.forward(store, codes)?;
    let dec_v = nets.decoder_v.forward(store, codes)?;

    // reconstruction: per-sample MSE over both modalities' 2L elements
    let mut out = LossBreakdown::default();
    let mut g_rec = [Tensor::zeros(dec_a.output().shape()), Tensor::zeros(dec_v.output().shape())];
    let inv = 1.0 / (2 * len) as f64;
    for (p, mode) in modes.iter().enumerate() {
        let weight = match mode {
            InputMode::Joint => 1.0,
            InputMode::SingleA => cfg.delta1,
            InputMode::SingleV => cfg.delta2,
        };
        let mut term = 0.0;
        for (k, (dec, m)) in [(&dec_a, Modality::Acoustic), (&dec_v, Modality::Vibration)]
            .into_iter()
            .enumerate()
        {
            let target = clean.signal(m);
            for i in 0..n {
                let r = p * n + i;
                let recon = dec.output().row(r);
                let g = g_rec[k].row_mut(r);
                for ((gj, &y), &t) in g.iter_mut().zip(recon).zip(target.row(i)) {
                    let diff = y - t;
                    term += diff * diff;
                    *gj = weight * scale * 2.0 * diff * inv;
                }
            }
        }
        term *= inv;
        match mode {
            InputMode::Joint => out.j1_self = term,
            InputMode::SingleA => out.j1_cross_a = term,
            InputMode::SingleV => out.j1_cross_v = term,
        }
    }
    out.total = out.j1_self + cfg.delta1 * out.j1_cross_a + cfg.delta2 * out.j1_cross_v;

    // contrastive / correlation terms on the code layer
    let d = codes.row_len();
    let mut g_codes = Tensor::zeros(codes.shape());
    let joint_rows: Vec<usize> = (0..n).collect();
    let codes_z = codes.select_rows(&joint_rows);
    let (j2, g_j2) = joint_contrastive_grad(&codes_z, &clean.labels, cfg.margin);
    out.j2 = j2;
    let joint_weight = lambda1 + alpha1;
    if joint_weight != 0.0 {
        out.total += joint_weight * j2;
        for (g, x) in g_codes.data_mut()[..n * d].iter_mut().zip(g_j2.data()) {
            *g += scale * joint_weight * x;
        }
    }
    if masked {
        let codes_a = codes.select_rows(&(n..2 * n).collect::<Vec<_>>());
        let codes_v = codes.select_rows(&(2 * n..3 * n).collect::<Vec<_>>());
        let (j3, ga, gv) = single_contrastive_grad(&codes_a, &codes_v, &clean.labels, cfg.margin);
        out.j3 = j3;
        let mut extra: Vec<(f64, Tensor, Tensor)> = Vec::new();
        if lambda2 != 0.0 {
            out.total += lambda2 * j3;
            extra.push((lambda2, ga, gv));
        }
        if variant == Variant::CorrNetStyle {
            let (corr, ca, cv) = correlation_term(&codes_a, &codes_v);
            out.corr = corr;
            out.total += cfg.corr_weight * corr;
            extra.push((cfg.corr_weight, ca, cv));
        }
        for (w, ga, gv) in extra {
            let data = g_codes.data_mut();
            for (g, x) in data[n * d..2 * n * d].iter_mut().zip(ga.data()) {
                *g += scale * w * x;
            }
            for (g, x) in data[2 * n * d..].iter_mut().zip(gv.data()) {
                *g += scale * w * x;
            }
        }
    }
    if !out.is_finite() {
        return Err(ObjectiveError::Nn(NnError::NonFiniteGradient {
            name: "loss value".into(),
        }));
    }
    if !with_grad {
        return Ok(out);
    }

    let [g_ra, g_rv] = g_rec;
    for (g, x) in g_codes
        .data_mut()
        .iter_mut()
        .zip(nets.decoder_a.backward(store, &dec_a, &g_ra)?.data())
    {
        *g += x;
    }
    for (g, x) in g_codes
        .data_mut()
        .iter_mut()
        .zip(nets.decoder_v.backward(store, &dec_v, &g_rv)?.data())
    {
        *g += x;
    }
    let g_fusion = nets.fusion.backward(store, &fusion, &g_codes)?;

    let mut g_enc_a = Tensor::zeros(enc_a.output().shape());
    let mut g_enc_v = Tensor::zeros(enc_v.output().shape());
    let mut g_zero_a = Tensor::zeros(&[1, e]);
    let mut g_zero_v = Tensor::zeros(&[1, e]);
    for (p, mode) in modes.iter().enumerate() {
        for i in 0..n {
            let src = g_fusion.row(p * n + i);
            let ga = if mode.uses(Modality::Acoustic) {
                g_enc_a.row_mut(i)
            } else {
                g_zero_a.row_mut(0)
            };
            ga.iter_mut().zip(&src[..e]).for_each(|(a, b)| *a += b);
            let gv = if mode.uses(Modality::Vibration) {
                g_enc_v.row_mut(i)
            } else {
                g_zero_v.row_mut(0)
            };
            gv.iter_mut().zip(&src[e..]).for_each(|(a, b)| *a += b);
        }
    }
    nets.encoder_a.accumulate_gradients(store, &enc_a, &g_enc_a)?;
    nets.encoder_v.accumulate_gradients(store, &enc_v, &g_enc_v)?;
    if let (Some(za), Some(zv)) = (&zero_a, &zero_v) {
        nets.encoder_a.accumulate_gradients(store, za, &g_zero_a)?;
        nets.encoder_v.accumulate_gradients(store, zv, &g_zero_v)?;
    }
    Ok(out)
}

/// Self and cross reconstruction sums `(self, cross from acoustic, cross from vibration)`.
pub fn reconstruction_loss(
    model: &mut MultiModalAE,
    clean: &SignalBatch,
    noisy: &SignalBatch,
    cfg: &LossConfig,
) -> Result<(f64, f64, f64), ObjectiveError> {
    let probe = LossConfig {
        variant: Variant::VanillaMissing,
        ..cfg.clone()
    };
    let b = evaluate(model, clean, noisy, &probe, false)?;
    Ok((b.j1_self, b.j1_cross_a, b.j1_cross_v))
}

/// Corrupts the batch, evaluates the combined objective and accumulates its gradient.
pub fn total_loss<R: Rng + ?Sized>(
    model: &mut MultiModalAE,
    batch: &SignalBatch,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<LossBreakdown, ObjectiveError> {
    if cfg.variant != Variant::Proposed {
        return Err(ObjectiveError::VariantMismatch {
            op: "total_loss",
            found: cfg.variant,
        });
    }
    let noisy = corrupt(batch, cfg, rng);
    evaluate(model, batch, &noisy, cfg, true)
}

/// Same as [`total_loss`] for the three comparison objectives.
pub fn baseline_loss<R: Rng + ?Sized>(
    model: &mut MultiModalAE,
    batch: &SignalBatch,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<LossBreakdown, ObjectiveError> {
    if cfg.variant == Variant::Proposed {
        return Err(ObjectiveError::VariantMismatch {
            op: "baseline_loss",
            found: cfg.variant,
        });
    }
    let noisy = corrupt(batch, cfg, rng);
    evaluate(model, batch, &noisy, cfg, true)
}

/// Fills every unset weight by matching the contrastive term's magnitude to
/// the reconstruction term measured on one batch.
pub fn calibrate(
    model: &mut MultiModalAE,
    clean: &SignalBatch,
    noisy: &SignalBatch,
    cfg: &LossConfig,
) -> Result<LossConfig, ObjectiveError> {
    if cfg.is_calibrated() {
        return Ok(cfg.clone());
    }
    let probe = LossConfig {
        lambda1: Some(0.0),
        lambda2: Some(0.0),
        alpha1: Some(0.0),
        variant: Variant::Proposed,
        ..cfg.clone()
    };
    let b = evaluate(model, clean, noisy, &probe, false)?;
    let j1 = b.j1_self + cfg.delta1 * b.j1_cross_a + cfg.delta2 * b.j1_cross_v;
    Ok(LossConfig {
        lambda1: cfg.lambda1.or(Some(j1 / (b.j2.abs() + CALIBRATION_EPS))),
        lambda2: cfg.lambda2.or(Some(j1 / (b.j3.abs() + CALIBRATION_EPS))),
        alpha1: cfg.alpha1.or(Some(b.j1_self / (b.j2.abs() + CALIBRATION_EPS))),
        ..cfg.clone()
    })
}
