//! Robust RMS screening within each class.

use serde::{Deserialize, Serialize};

use super::{rms, MultiModalSample};

/// Robust z-scores are `0.6745 (x - median) / MAD`, matching a standard score
/// for Gaussian data.
const MAD_SCALE: f64 = 0.6745;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedSample {
    pub id: String,
    pub label: usize,
    /// Largest absolute robust z-score over the two modalities.
    pub score: f64,
    /// Screening round in which the sample was dropped (0-based).
    pub round: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub threshold: f64,
    pub kept: usize,
    pub rejected: Vec<RejectedSample>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Robust z-score of each value against the group median.
fn robust_scores(x: &[f64]) -> Vec<f64> {
    let med = median(&mut x.to_vec());
    let mut dev: Vec<f64> = x.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    // floor keeps numerically identical groups from producing huge scores
    let scale = mad.max(1e-9 * med.abs()).max(1e-300);
    x.iter().map(|v| MAD_SCALE * (v - med).abs() / scale).collect()
}

/// Drops samples whose acoustic or vibration RMS lies more than `z_threshold`
/// robust z-scores from their class median. Screening repeats until nothing
/// more is dropped, so applying it twice changes nothing.
pub fn remove_outliers(samples: Vec<MultiModalSample>, z_threshold: f64) -> (Vec<MultiModalSample>, OutlierReport) {
    let mut report = OutlierReport {
        threshold: z_threshold,
        ..Default::default()
    };
    let mut kept = samples;
    if z_threshold.is_nan() || z_threshold == f64::INFINITY {
        report.kept = kept.len();
        return (kept, report);
    }
    for round in 0.. {
        let mut worst = vec![0.0f64; kept.len()];
        let n_classes = kept.iter().map(|s| s.label + 1).max().unwrap_or(0);
        for class in 0..n_classes {
            let members: Vec<usize> = (0..kept.len()).filter(|&i| kept[i].label == class).collect();
            if members.len() < 3 {
                continue;
            }
            let picks: [fn(&MultiModalSample) -> f64; 2] = [|s| rms(&s.acoustic), |s| rms(&s.vibration)];
            for pick in picks {
                let values: Vec<f64> = members.iter().map(|&i| pick(&kept[i])).collect();
                for (&i, z) in members.iter().zip(robust_scores(&values)) {
                    worst[i] = worst[i].max(z);
                }
            }
        }
        let before = kept.len();
        let mut next = Vec::with_capacity(before);
        for (s, z) in kept.into_iter().zip(worst) {
            if z > z_threshold {
                report.rejected.push(RejectedSample {
                    id: s.id.clone(),
                    label: s.label,
                    score: z,
                    round,
                });
            } else {
                next.push(s);
            }
        }
        kept = next;
        if kept.len() == before {
            break;
        }
    }
    report.kept = kept.len();
    (kept, report)
}
