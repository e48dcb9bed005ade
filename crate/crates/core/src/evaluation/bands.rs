//! Low/high frequency split of real and reconstructed signals.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::model::{InputMode, Modality, MultiModalAE, MultiModalSample};

use super::EvalError;

/// Zero-phase split at `cutoff_hz`: bins at or below the cutoff go to the low
/// band, the rest to the high band. `low + high` reproduces the input.
pub fn split_bands(x: &[f64], cutoff_hz: f64, sample_rate: f64) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0) {
        return Err(EvalError::Invalid(format!(
            "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
            sample_rate / 2.0
        )));
    }
    let n = x.len();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let freq = k.min(n - k) as f64 * sample_rate / n as f64;
        if freq > cutoff_hz {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let low: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
    let high = x.iter().zip(&low).map(|(a, b)| a - b).collect();
    Ok((low, high))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandErrors {
    pub mode: InputMode,
    pub modality: Modality,
    pub low_mse: f64,
    pub high_mse: f64,
    pub total_mse: f64,
    /// Errors divided by the power of the real signal in the same band.
    pub low_relative: f64,
    pub high_relative: f64,
    pub total_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub cutoff_hz: f64,
    pub sample_rate: f64,
    pub samples: usize,
    /// One entry per input mode and reconstructed modality (6 in all).
    pub entries: Vec<BandErrors>,
}

impl BandReport {
    pub fn get(&self, mode: InputMode, modality: Modality) -> Option<&BandErrors> {
        self.entries.iter().find(|e| e.mode == mode && e.modality == modality)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "reconstruction band errors: {} samples, cutoff {:.1} Hz, sample rate {:.1} Hz\n",
            self.samples, self.cutoff_hz, self.sample_rate
        );
        s.push_str("mode   modality    low_mse    high_mse   total_mse  low_rel   high_rel  total_rel\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{:<6} {:<10} {:>9.5} {:>10.5} {:>10.5} {:>9.5} {:>9.5} {:>9.5}\n",
                e.mode.short(),
                format!("{:?}", e.modality).to_lowercase(),
                e.low_mse,
                e.high_mse,
                e.total_mse,
                e.low_relative,
                e.high_relative,
                e.total_relative
            ));
        }
        s
    }
}

/// Reconstructs every sample in all three input modes and measures band-wise
/// error against the clean signal, pooled over samples.
pub fn reconstruction_band_report(
    model: &MultiModalAE,
    samples: &[&MultiModalSample],
    cutoff_hz: f64,
    sample_rate: f64,
) -> Result<BandReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Invalid("no samples to reconstruct".into()));
    }
    split_bands(&[0.0; 4], cutoff_hz, sample_rate)?;
    let mut entries = Vec::new();
    for mode in InputMode::ALL {
        let codes = model.encode(samples, mode)?.codes;
        let (rec_a, rec_v) = model.decode(&codes)?;
        for (modality, rec) in [(Modality::Acoustic, &rec_a), (Modality::Vibration, &rec_v)] {
            let real: Vec<&[f64]> = samples.iter().map(|s| s.signal(modality)).collect();
            let recon: Vec<&[f64]> = (0..samples.len()).map(|i| rec.row(i)).collect();
            entries.push(band_errors(mode, modality, &real, &recon, cutoff_hz, sample_rate)?);
        }
    }
    Ok(BandReport {
        cutoff_hz,
        sample_rate,
        samples: samples.len(),
        entries,
    })
}

/// Band-wise error of `recon` against `real`, pooled over all rows.
pub fn band_errors(
    mode: InputMode,
    modality: Modality,
    real: &[&[f64]],
    recon: &[&[f64]],
    cutoff_hz: f64,
    sample_rate: f64,
) -> Result<BandErrors, EvalError> {
    if real.len() != recon.len() {
        return Err(EvalError::Invalid(format!(
            "{} real signals but {} reconstructions",
            real.len(),
            recon.len()
        )));
    }
    // [err low, err high, err total, power low, power high, power total]
    let mut acc = [0.0f64; 6];
    let mut count = 0usize;
    for (real, r) in real.iter().zip(recon) {
        if real.len() != r.len() {
            return Err(EvalError::Invalid("reconstruction length differs from the signal".into()));
        }
        let (rl, rh) = split_bands(real, cutoff_hz, sample_rate)?;
        let (pl, ph) = split_bands(r, cutoff_hz, sample_rate)?;
        for j in 0..real.len() {
            acc[0] += (pl[j] - rl[j]).powi(2);
            acc[1] += (ph[j] - rh[j]).powi(2);
            acc[2] += (r[j] - real[j]).powi(2);
            acc[3] += rl[j] * rl[j];
            acc[4] += rh[j] * rh[j];
            acc[5] += real[j] * real[j];
        }
        count += real.len();
    }
    let c = count.max(1) as f64;
    let rel = |e: f64, p: f64| if p > 0.0 { e / p } else { 0.0 };
    Ok(BandErrors {
        mode,
        modality,
        low_mse: acc[0] / c,
        high_mse: acc[1] / c,
        total_mse: acc[2] / c,
        low_relative: rel(acc[0], acc[3]),
        high_relative: rel(acc[1], acc[4]),
        total_relative: rel(acc[2], acc[5]),
    })
}
