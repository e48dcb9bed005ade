//! Cutting continuous recordings into two-revolution windows using the crank
//! trigger channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::synthetic::{
    bursts_at, cycle_bursts, mix_modality, private_at, private_tones, shared_nuisance, tones_at, Burst, ACOUSTIC_PATH,
    VIBRATION_PATH,
};
use super::{DataError, MultiModalSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub id: String,
    pub label: usize,
    pub sample_rate: f64,
    pub acoustic: Vec<f64>,
    pub vibration: Vec<f64>,
    /// Crank-position channel: one pulse per revolution.
    pub trigger: Vec<f64>,
}

impl RawRecording {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.acoustic.len() != self.vibration.len() || self.acoustic.len() != self.trigger.len() {
            return Err(DataError::ChannelLength {
                id: self.id.clone(),
                acoustic: self.acoustic.len(),
                vibration: self.vibration.len(),
                trigger: self.trigger.len(),
            });
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(DataError::InvalidConfig(format!(
                "recording `{}`: sample rate {}",
                self.id, self.sample_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub signal_length: usize,
    /// Revolutions between consecutive window starts.
    pub stride: usize,
    /// Hysteresis band as a fraction of the trigger's robust range.
    pub hysteresis: f64,
    /// Maximum relative deviation of a revolution interval from the median.
    pub max_interval_deviation: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            signal_length: 4800,
            stride: 2,
            hysteresis: 0.1,
            max_interval_deviation: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub recording: String,
    pub revolutions: usize,
    pub windows: usize,
    pub min_raw_length: usize,
    pub max_raw_length: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Sample indices of rising trigger edges (revolution starts).
///
/// The threshold is the midpoint of the 1st and 99.9th percentiles, so pulses
/// down to a fraction of a percent of each revolution are found; an edge
/// fires when the signal rises above `mid + h/2` after having been below
/// `mid - h/2`, with `h` the hysteresis fraction of that range.
pub fn detect_revolutions(trigger: &[f64], hysteresis: f64) -> Vec<usize> {
    if trigger.len() < 2 {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = trigger.iter().copied().filter(|x| x.is_finite()).collect();
    if sorted.len() < 2 {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&sorted, 0.01), percentile(&sorted, 0.999));
    let range = hi - lo;
    if range <= 0.0 {
        return Vec::new();
    }
    let mid = 0.5 * (lo + hi);
    let (high, low) = (mid + 0.5 * hysteresis * range, mid - 0.5 * hysteresis * range);
    let mut marks = Vec::new();
    // an edge only counts once the signal has been seen low, so a recording
    // starting mid-pulse does not produce a spurious first mark
    let mut armed = false;
    for (i, &x) in trigger.iter().enumerate() {
        if armed && x > high {
            marks.push(i);
            armed = false;
        } else if !armed && x < low {
            armed = true;
        }
    }
    marks
}

/// Linear resampling of `x` onto `n` points spanning the same interval.
fn resample(x: &[f64], n: usize) -> Vec<f64> {
    let m = x.len();
    if m == n {
        return x.to_vec();
    }
    let step = m as f64 / n as f64;
    (0..n)
        .map(|j| {
            let pos = j as f64 * step;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 < m {
                x[i] * (1.0 - frac) + x[i + 1] * frac
            } else {
                x[m - 1]
            }
        })
        .collect()
}

/// Two-revolution windows, length-normalised by linear resampling.
///
/// Windows start at every `stride`-th revolution mark and end at the mark two
/// revolutions later, so none crosses the final mark. Signals are returned
/// raw (not standardised) so that outlier screening sees their true scale.
pub fn segment_recording(
    rec: &RawRecording,
    cfg: &SegmentConfig,
) -> Result<(Vec<MultiModalSample>, SegmentReport), DataError> {
    rec.validate()?;
    if cfg.stride == 0 || cfg.signal_length < 2 {
        return Err(DataError::InvalidConfig("stride and signal_length must be positive".into()));
    }
    let marks = detect_revolutions(&rec.trigger, cfg.hysteresis);
    if marks.len() < 3 {
        return Err(DataError::TooFewTriggers {
            id: rec.id.clone(),
            found: marks.len(),
        });
    }
    let intervals: Vec<usize> = marks.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = intervals.clone();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    for (index, &interval) in intervals.iter().enumerate() {
        if (interval as f64 - median as f64).abs() > cfg.max_interval_deviation * median as f64 {
            return Err(DataError::IrregularTriggers {
                id: rec.id.clone(),
                index: index + 1,
                interval,
                median,
            });
        }
    }
    let mut samples = Vec::new();
    let (mut min_len, mut max_len) = (usize::MAX, 0);
    let mut start = 0;
    while start + 2 < marks.len() {
        let (s, e) = (marks[start], marks[start + 2]);
        min_len = min_len.min(e - s);
        max_len = max_len.max(e - s);
        samples.push(MultiModalSample {
            id: format!("{}-w{:03}", rec.id, samples.len()),
            label: rec.label,
            acoustic: resample(&rec.acoustic[s..e], cfg.signal_length),
            vibration: resample(&rec.vibration[s..e], cfg.signal_length),
        });
        start += cfg.stride;
    }
    let report = SegmentReport {
        recording: rec.id.clone(),
        revolutions: marks.len() - 1,
        windows: samples.len(),
        min_raw_length: min_len,
        max_raw_length: max_len,
    };
    Ok((samples, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordingConfig {
    pub seconds: f64,
    pub sample_rate: f64,
    pub rpm: f64,
    pub class_separation: f64,
    pub cross_correlation: f64,
    pub modality_noise_db: f64,
    /// Physical amplitude of the recording; segmentation keeps it.
    pub gain: f64,
}

impl Default for RecordingConfig {
    fn default() -> Self {
        RecordingConfig {
            seconds: 5.0,
            sample_rate: 32768.0,
            rpm: 867.0,
            class_separation: 1.0,
            cross_correlation: 0.7,
            modality_noise_db: -12.0,
            gain: 1.0,
        }
    }
}

/// Continuous engine recording with a crank trigger, built from the same
/// burst model as the synthetic windows.
pub fn synthesize_recording(id: &str, label: usize, cfg: &RecordingConfig, seed: u64) -> RawRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (cfg.seconds * cfg.sample_rate).round() as usize;
    let rev = 60.0 / cfg.rpm;
    let window = 2.0 * rev;
    // recording starts at a random crank angle
    let offset = rng.random_range(0.0..window);
    let cycles = ((cfg.seconds + offset) / window).ceil() as usize + 1;
    let bursts: Vec<[Burst; 4]> = (0..cycles)
        .map(|_| cycle_bursts(label, cfg.class_separation, &mut rng))
        .collect();
    let nuisance = shared_nuisance(&mut rng);
    let window_samples = window * cfg.sample_rate;
    let nyquist_cycles = window_samples / 2.0;
    let cycle_pos = |j: usize| -> (usize, f64) {
        let c = (j as f64 / cfg.sample_rate + offset) / window;
        (c.floor() as usize, c)
    };
    let shared = |path| -> Vec<f64> {
        (0..n)
            .map(|j| {
                let (w, c) = cycle_pos(j);
                let u = c - w as f64;
                // neighbouring windows spill over near the edges
                let mut s = bursts_at(&bursts[w], u, path) + tones_at(&nuisance, c, path) * 0.5;
                if w > 0 {
                    s += bursts_at(&bursts[w - 1], u + 1.0, path);
                }
                if w + 1 < bursts.len() {
                    s += bursts_at(&bursts[w + 1], u - 1.0, path);
                }
                s
            })
            .collect()
    };
    let mut channels = Vec::with_capacity(2);
    for path in [ACOUSTIC_PATH, VIBRATION_PATH] {
        let (slow, fast) = private_tones(&mut rng, nyquist_cycles);
        let private: Vec<f64> = (0..n)
            .map(|j| {
                let (_, c) = cycle_pos(j);
                private_at(&slow, &fast, c)
            })
            .collect();
        let mut x = mix_modality(&shared(path), &private, cfg.cross_correlation, cfg.modality_noise_db, &mut rng);
        x.iter_mut().for_each(|v| *v *= cfg.gain);
        channels.push(x);
    }
    let pulse = 0.05 * rev;
    let noise = Normal::new(0.0, 0.05).expect("positive std");
    let trigger = (0..n)
        .map(|j| {
            let t = j as f64 / cfg.sample_rate + offset;
            let phase = t % rev;
            let level = if phase < pulse { 5.0 } else { 0.0 };
            level + noise.sample(&mut rng)
        })
        .collect();
    let vibration = channels.pop().expect("two channels");
    let acoustic = channels.pop().expect("two channels");
    RawRecording {
        id: id.to_string(),
        label,
        sample_rate: cfg.sample_rate,
        acoustic,
        vibration,
        trigger,
    }
}
