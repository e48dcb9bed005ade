use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Per-class scores weighted by true-class support. Weighted recall equals accuracy.
    #[default]
    Weighted,
    /// Unweighted mean over classes seen in labels or predictions.
    Macro,
}

impl std::str::FromStr for Averaging {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weighted" => Ok(Averaging::Weighted),
            "macro" => Ok(Averaging::Macro),
            other => Err(format!("unknown averaging `{other}` (expected weighted or macro)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[true][predicted]`; counts, or count means after fold averaging.
    pub confusion: Vec<Vec<f64>>,
    /// Classes whose precision was undefined (never predicted) and scored 0.
    pub zero_division: Vec<usize>,
}

fn safe_div(a: f64, b: f64) -> Option<f64> {
    if b > 0.0 {
        Some(a / b)
    } else {
        None
    }
}

pub fn compute_metrics(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
    averaging: Averaging,
) -> Result<MetricSet, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Invalid("cannot score an empty prediction set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(EvalError::Invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(bad) = predictions.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(EvalError::Invalid(format!("class {bad} out of range for {n_classes} classes")));
    }
    let mut confusion = vec![vec![0.0; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        confusion[y][p] += 1.0;
    }
    let n = labels.len() as f64;
    let trace: f64 = (0..n_classes).map(|c| confusion[c][c]).sum();
    let mut zero_division = Vec::new();
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    let mut counted = 0usize;
    for c in 0..n_classes {
        let tp = confusion[c][c];
        let support: f64 = confusion[c].iter().sum();
        let predicted: f64 = (0..n_classes).map(|r| confusion[r][c]).sum();
        if support == 0.0 && predicted == 0.0 {
            continue;
        }
        let p = safe_div(tp, predicted).unwrap_or_else(|| {
            zero_division.push(c);
            0.0
        });
        let r = safe_div(tp, support).unwrap_or(0.0);
        let f = safe_div(2.0 * p * r, p + r).unwrap_or(0.0);
        let w = match averaging {
            Averaging::Weighted => support / n,
            Averaging::Macro => 1.0,
        };
        precision += w * p;
        recall += w * r;
        f1 += w * f;
        counted += 1;
    }
    if averaging == Averaging::Macro {
        let k = counted.max(1) as f64;
        precision /= k;
        recall /= k;
        f1 /= k;
    }
    Ok(MetricSet {
        accuracy: trace / n,
        precision,
        recall,
        f1,
        confusion,
        zero_division,
    })
}

/// Arithmetic mean of every scalar and confusion entry.
pub fn average_metrics(sets: &[&MetricSet]) -> Option<MetricSet> {
    let first = sets.first()?;
    let k = sets.len() as f64;
    let mean = |f: fn(&MetricSet) -> f64| sets.iter().map(|s| f(s)).sum::<f64>() / k;
    let c = first.confusion.len();
    let mut confusion = vec![vec![0.0; c]; c];
    for s in sets {
        for (row, srow) in confusion.iter_mut().zip(&s.confusion) {
            row.iter_mut().zip(srow).for_each(|(a, b)| *a += b / k);
        }
    }
    let mut zero_division: Vec<usize> = sets.iter().flat_map(|s| s.zero_division.iter().copied()).collect();
    zero_division.sort_unstable();
    zero_division.dedup();
    Some(MetricSet {
        accuracy: mean(|s| s.accuracy),
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        confusion,
        zero_division,
    })
}
