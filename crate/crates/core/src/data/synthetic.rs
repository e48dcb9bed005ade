//! Synthetic stand-in for two-revolution engine windows.
//!
//! Each window holds four ignition bursts, one per cylinder in firing order
//! 1-3-4-2. Class 0 is healthy; class `c >= 1` carries a weak, late and
//! detuned ignition on cylinder `((c - 1) mod 4) + 1`. The class-bearing
//! source plus a class-free low-frequency nuisance forms the shared source,
//! which reaches each modality through a fixed delay and carrier phase
//! rotation. Each modality then mixes in its own private component (one slow
//! wave and a few high-frequency tones) and white noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

use super::{rms, standardize, DataError, Dataset, MultiModalSample, Provenance, ProvenanceKind};

/// Duration of two crankshaft revolutions at 867 rpm.
pub const WINDOW_SECONDS: f64 = 2.0 * 60.0 / 867.0;

/// Burst slot of each cylinder (1..=4) within the window, firing order 1-3-4-2.
const CYLINDER_SLOT: [usize; 4] = [0, 3, 1, 2];
const SLOT_POSITIONS: [f64; 4] = [0.125, 0.375, 0.625, 0.875];
const SLOT_CARRIERS: [f64; 4] = [12.0, 13.5, 11.0, 14.5];
const ENVELOPE_WIDTH: f64 = 0.03;
/// Windows start at the crank trigger, so each cylinder's event keeps its
/// carrier phase up to a small cycle-to-cycle jitter (radians).
const SLOT_PHASES: [f64; 4] = [0.0, 1.9, 3.7, 5.1];
const PHASE_JITTER: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub per_class_counts: Vec<usize>,
    pub signal_length: usize,
    /// Power ratio of the class-bearing source to the shared nuisance, dB.
    pub shared_snr_db: f64,
    /// White-noise power relative to each clean modality signal, dB. `-inf` disables it.
    pub modality_noise_db: f64,
    /// Amplitude weight of the shared source; the private part gets `1 - cross_correlation`.
    pub cross_correlation: f64,
    /// Scales every defect (amplitude loss, delay, detuning).
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_classes: 4,
            per_class_counts: vec![244, 120, 173, 168],
            signal_length: 4800,
            shared_snr_db: 6.0,
            modality_noise_db: -12.0,
            cross_correlation: 0.7,
            class_separation: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Desk-scale preset: 256-sample windows and defects twice as strong as the default.
    pub fn moderate() -> Self {
        SyntheticConfig {
            signal_length: 256,
            class_separation: 2.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.per_class_counts.len() != self.n_classes {
            return bad(format!(
                "{} per-class counts given for {} classes",
                self.per_class_counts.len(),
                self.n_classes
            ));
        }
        if self.per_class_counts.contains(&0) {
            return bad("per-class counts must be positive".into());
        }
        if self.signal_length < 16 {
            return bad(format!("signal_length {} is too short", self.signal_length));
        }
        if !(0.0..=1.0).contains(&self.cross_correlation) {
            return bad(format!("cross_correlation {} outside [0, 1]", self.cross_correlation));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return bad(format!("class_separation must be positive, got {}", self.class_separation));
        }
        if !self.shared_snr_db.is_finite() {
            return bad("shared_snr_db must be finite".into());
        }
        if self.modality_noise_db.is_nan() || self.modality_noise_db == f64::INFINITY {
            return bad("modality_noise_db must be a number below +inf".into());
        }
        Ok(())
    }
}

/// `H` for the healthy class, then `C1`, `C2`, ...
pub fn class_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|c| if c == 0 { "H".to_string() } else { format!("C{c}") })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Burst {
    pub pos: f64,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tone {
    pub freq: f64,
    pub amp: f64,
    pub phase: f64,
}

impl Tone {
    fn random<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Tone {
        Tone {
            freq: rng.random_range(lo..hi),
            amp: rng.random_range(0.5..1.0),
            phase: rng.random_range(0.0..TAU),
        }
    }

    #[inline]
    pub fn at(&self, u: f64) -> f64 {
        self.amp * (TAU * self.freq * u + self.phase).sin()
    }
}

/// Fixed transfer from the shared source to one modality.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Path {
    pub delay: f64,
    pub rotation: f64,
}

pub(crate) const ACOUSTIC_PATH: Path = Path {
    delay: 0.0,
    rotation: 0.0,
};
pub(crate) const VIBRATION_PATH: Path = Path {
    delay: 0.006,
    rotation: FRAC_PI_2,
};

/// Ignition bursts of one window for class `label`, with per-window jitter.
pub(crate) fn cycle_bursts<R: Rng>(label: usize, separation: f64, rng: &mut R) -> [Burst; 4] {
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let shift = 0.004 * jitter.sample(rng);
    let mut bursts = [Burst {
        pos: 0.0,
        amp: 0.0,
        freq: 0.0,
        phase: 0.0,
    }; 4];
    for (slot, b) in bursts.iter_mut().enumerate() {
        *b = Burst {
            pos: SLOT_POSITIONS[slot] + shift + 0.002 * jitter.sample(rng),
            amp: (1.0 + 0.1 * jitter.sample(rng)).max(0.1),
            freq: SLOT_CARRIERS[slot],
            phase: SLOT_PHASES[slot] + PHASE_JITTER * jitter.sample(rng),
        };
    }
    if label > 0 {
        let cylinder = (label - 1) % 4;
        let level = (1 + (label - 1) / 4) as f64 * separation;
        let b = &mut bursts[CYLINDER_SLOT[cylinder]];
        b.amp *= (1.0 - 0.35 * level).max(0.05);
        b.pos += 0.01 * level;
        b.freq -= 1.5 * level;
    }
    bursts
}

#[inline]
pub(crate) fn bursts_at(bursts: &[Burst], u: f64, path: Path) -> f64 {
    let mut s = 0.0;
    for b in bursts {
        let x = u - b.pos - path.delay;
        let env = (-x * x / (2.0 * ENVELOPE_WIDTH * ENVELOPE_WIDTH)).exp();
        if env > 1e-12 {
            s += b.amp * env * (TAU * b.freq * x + b.phase + path.rotation).sin();
        }
    }
    s
}

#[inline]
pub(crate) fn tones_at(tones: &[Tone], u: f64, path: Path) -> f64 {
    tones
        .iter()
        .map(|t| t.amp * (TAU * t.freq * (u - path.delay) + t.phase + path.rotation).sin())
        .sum()
}

/// Random class-free low-frequency nuisance shared by both modalities.
pub(crate) fn shared_nuisance<R: Rng>(rng: &mut R) -> Vec<Tone> {
    (0..3).map(|_| Tone::random(rng, 1.0, 20.0)).collect()
}

/// Amplitudes of the private slow wave and of each private fast tone.
const PRIVATE_SLOW_AMP: f64 = 1.5;
const PRIVATE_FAST_AMP: f64 = 0.5;

/// Private component: one slow wave and three tones in the upper half of the band.
pub(crate) fn private_tones<R: Rng>(rng: &mut R, nyquist_cycles: f64) -> (Tone, Vec<Tone>) {
    let slow = Tone::random(rng, 1.5, 6.0);
    let fast = (0..3)
        .map(|_| Tone::random(rng, 0.45 * nyquist_cycles, 0.85 * nyquist_cycles))
        .collect();
    (slow, fast)
}

#[inline]
pub(crate) fn private_at(slow: &Tone, fast: &[Tone], u: f64) -> f64 {
    PRIVATE_SLOW_AMP * slow.at(u) + fast.iter().map(|t| PRIVATE_FAST_AMP * t.at(u)).sum::<f64>()
}

/// Mixes shared and private parts at unit power each, then adds noise.
pub(crate) fn mix_modality<R: Rng>(
    shared: &[f64],
    private: &[f64],
    rho: f64,
    noise_db: f64,
    rng: &mut R,
) -> Vec<f64> {
    let (rs, rp) = (rms(shared), rms(private));
    let ws = if rs > 0.0 { rho / rs } else { 0.0 };
    let wp = if rp > 0.0 { (1.0 - rho) / rp } else { 0.0 };
    let mut x: Vec<f64> = shared.iter().zip(private).map(|(s, p)| ws * s + wp * p).collect();
    if noise_db > f64::NEG_INFINITY {
        let std = rms(&x) * 10f64.powf(noise_db / 20.0);
        if std > 0.0 {
            let noise = Normal::new(0.0, std).expect("positive std");
            x.iter_mut().for_each(|v| *v += noise.sample(rng));
        }
    }
    x
}

fn render_sample<R: Rng>(cfg: &SyntheticConfig, label: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let l = cfg.signal_length;
    let bursts = cycle_bursts(label, cfg.class_separation, rng);
    let nuisance = shared_nuisance(rng);
    let nyquist = l as f64 / 2.0;
    let grid: Vec<f64> = (0..l).map(|j| j as f64 / l as f64).collect();

    // the nuisance is scaled once on the acoustic path so both modalities see the same source
    let class_a: Vec<f64> = grid.iter().map(|&u| bursts_at(&bursts, u, ACOUSTIC_PATH)).collect();
    let nuis_a: Vec<f64> = grid.iter().map(|&u| tones_at(&nuisance, u, ACOUSTIC_PATH)).collect();
    let sc = 1.0 / rms(&class_a).max(1e-12);
    let sn = 10f64.powf(-cfg.shared_snr_db / 20.0) / rms(&nuis_a).max(1e-12);
    let shared = |path: Path| -> Vec<f64> {
        grid.iter()
            .map(|&u| sc * bursts_at(&bursts, u, path) + sn * tones_at(&nuisance, u, path))
            .collect()
    };
    let mut out = Vec::with_capacity(2);
    for path in [ACOUSTIC_PATH, VIBRATION_PATH] {
        let (slow, fast) = private_tones(rng, nyquist);
        let private: Vec<f64> = grid
            .iter()
            .map(|&u| private_at(&slow, &fast, u))
            .collect();
        let mut x = mix_modality(&shared(path), &private, cfg.cross_correlation, cfg.modality_noise_db, rng);
        standardize(&mut x);
        out.push(x);
    }
    let v = out.pop().expect("two modalities");
    let a = out.pop().expect("two modalities");
    (a, v)
}

/// Deterministic synthetic dataset; samples are ordered by class.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let names = class_names(cfg.n_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.per_class_counts.iter().sum());
    for (label, &count) in cfg.per_class_counts.iter().enumerate() {
        for k in 0..count {
            let (acoustic, vibration) = render_sample(cfg, label, &mut rng);
            samples.push(MultiModalSample {
                id: format!("{}-{:04}", names[label], k),
                label,
                acoustic,
                vibration,
            });
        }
    }
    let config = serde_json::to_value(cfg).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    Ok(Dataset {
        samples,
        class_names: names,
        signal_length: cfg.signal_length,
        sample_rate: cfg.signal_length as f64 / WINDOW_SECONDS,
        provenance: Provenance {
            kind: ProvenanceKind::Synthetic,
            config,
        },
    })
}
