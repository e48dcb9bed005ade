//! Linear probe on frozen representations: one affine layer trained with
//! softmax cross-entropy and full-batch ADAM.

use serde::{Deserialize, Serialize};

use crate::model::{InputMode, LatentBatch};
use crate::nn::Tensor;

use super::TrainError;

/// Which representation set a probe was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSource {
    Joint,
    Acoustic,
    Vibration,
    /// Rows of `h(a)` and `h(v)` stacked as independent samples.
    Union,
}

impl ProbeSource {
    pub fn short(self) -> &'static str {
        match self {
            ProbeSource::Joint => "h(z)",
            ProbeSource::Acoustic => "h(a)",
            ProbeSource::Vibration => "h(v)",
            ProbeSource::Union => "h(a)+h(v)",
        }
    }
}

impl From<InputMode> for ProbeSource {
    fn from(m: InputMode) -> Self {
        match m {
            InputMode::Joint => ProbeSource::Joint,
            InputMode::SingleA => ProbeSource::Acoustic,
            InputMode::SingleV => ProbeSource::Vibration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once the loss changes by less than this between iterations.
    pub tolerance: f64,
    /// L2 penalty on the weights of the standardized problem (bias excluded).
    pub l2: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            learning_rate: 0.05,
            max_iterations: 2000,
            tolerance: 1e-6,
            l2: 1e-3,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "classifier learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_iterations == 0 {
            return Err(TrainError::InvalidConfig("classifier max_iterations must be >= 1".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) || !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(TrainError::InvalidConfig("classifier tolerance and l2 must be >= 0".into()));
        }
        Ok(())
    }
}

/// `logits = x · weights + bias`, weights stored row-major as `[features, classes]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub n_features: usize,
    pub n_classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub source: ProbeSource,
    pub iterations: usize,
    pub final_loss: f64,
}

impl LinearClassifier {
    pub fn logits_row(&self, x: &[f64]) -> Vec<f64> {
        let c = self.n_classes;
        let mut out = self.bias.clone();
        for (f, &xf) in x.iter().enumerate() {
            let w = &self.weights[f * c..(f + 1) * c];
            for (o, wk) in out.iter_mut().zip(w) {
                *o += xf * wk;
            }
        }
        out
    }

    pub fn logits(&self, codes: &Tensor) -> Result<Tensor, TrainError> {
        self.check_width(codes)?;
        let n = codes.batch();
        let mut data = Vec::with_capacity(n * self.n_classes);
        for i in 0..n {
            data.extend(self.logits_row(codes.row(i)));
        }
        Ok(Tensor::from_vec(&[n, self.n_classes], data)?)
    }

    /// Softmax class probabilities, one row per sample.
    pub fn probabilities(&self, codes: &Tensor) -> Result<Tensor, TrainError> {
        let mut t = self.logits(codes)?;
        for i in 0..t.batch() {
            softmax_in_place(t.row_mut(i));
        }
        Ok(t)
    }

    /// Arg-max class per row; ties resolve to the lowest class id.
    pub fn predict(&self, codes: &Tensor) -> Result<Vec<usize>, TrainError> {
        self.check_width(codes)?;
        Ok((0..codes.batch()).map(|i| argmax(&self.logits_row(codes.row(i)))).collect())
    }

    fn check_width(&self, codes: &Tensor) -> Result<(), TrainError> {
        if codes.shape().len() != 2 || codes.row_len() != self.n_features {
            return Err(TrainError::InvalidConfig(format!(
                "classifier expects {} features, got shape {:?}",
                self.n_features,
                codes.shape()
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|x| x.is_finite())
    }
}

pub(crate) fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = k;
        }
    }
    best
}

fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    x.iter_mut().for_each(|v| *v /= s);
}

/// Trains a probe on one representation set, or on the row union of several
/// (labels travel with their rows). `n_classes` fixes the output width.
pub fn train_classifier(
    sets: &[&LatentBatch],
    n_classes: usize,
    cfg: &ClassifierConfig,
) -> Result<LinearClassifier, TrainError> {
    cfg.validate()?;
    let first = sets.first().ok_or(TrainError::EmptySet("classifier input"))?;
    let d = first.width();
    let source = if sets.len() == 1 {
        ProbeSource::from(first.mode)
    } else {
        ProbeSource::Union
    };
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut labels = Vec::new();
    for s in sets {
        if s.width() != d || s.codes.shape().len() != 2 {
            return Err(TrainError::InvalidConfig("representation sets differ in width".into()));
        }
        if s.labels.len() != s.len() {
            return Err(TrainError::InvalidConfig("labels do not match representation rows".into()));
        }
        for i in 0..s.len() {
            rows.push(s.codes.row(i));
        }
        labels.extend_from_slice(&s.labels);
    }
    if rows.is_empty() {
        return Err(TrainError::EmptySet("classifier input"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(TrainError::InvalidConfig(format!("label {bad} out of range for {n_classes} classes")));
    }
    let mut present = vec![false; n_classes];
    labels.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(TrainError::SingleClass);
    }
    if rows.iter().any(|r| r.iter().any(|x| !x.is_finite())) {
        return Err(TrainError::InvalidConfig("non-finite representation".into()));
    }

    let n = rows.len();
    let nf = n as f64;
    let c = n_classes;
    let mut mean = vec![0.0; d];
    for r in &rows {
        mean.iter_mut().zip(*r).for_each(|(m, x)| *m += x / nf);
    }
    let mut std = vec![0.0; d];
    for r in &rows {
        for f in 0..d {
            std[f] += (r[f] - mean[f]).powi(2) / nf;
        }
    }
    std.iter_mut().for_each(|s| {
        *s = s.sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    });
    let x: Vec<f64> = rows
        .iter()
        .flat_map(|r| (0..d).map(|f| (r[f] - mean[f]) / std[f]).collect::<Vec<_>>())
        .collect();

    // full-batch ADAM on the standardized problem, zero init
    let mut w = vec![0.0; d * c];
    let mut b = vec![0.0; c];
    let (mut mw, mut vw) = (vec![0.0; d * c], vec![0.0; d * c]);
    let (mut mb, mut vb) = (vec![0.0; c], vec![0.0; c]);
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut gw = vec![0.0; d * c];
    let mut gb = vec![0.0; c];
    let mut prev = f64::INFINITY;
    let mut loss = f64::INFINITY;
    let mut iterations = 0;
    let mut p = vec![0.0; c];
    for it in 1..=cfg.max_iterations {
        gw.fill(0.0);
        gb.fill(0.0);
        let mut ce = 0.0;
        for i in 0..n {
            let xi = &x[i * d..(i + 1) * d];
            p.copy_from_slice(&b);
            for (f, &xf) in xi.iter().enumerate() {
                for k in 0..c {
                    p[k] += xf * w[f * c + k];
                }
            }
            let m = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + p.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            ce += lse - p[labels[i]];
            for k in 0..c {
                p[k] = (p[k] - lse).exp();
            }
            p[labels[i]] -= 1.0;
            for k in 0..c {
                gb[k] += p[k] / nf;
            }
            for (f, &xf) in xi.iter().enumerate() {
                for k in 0..c {
                    gw[f * c + k] += xf * p[k] / nf;
                }
            }
        }
        let penalty = 0.5 * cfg.l2 * w.iter().map(|v| v * v).sum::<f64>();
        loss = ce / nf + penalty;
        iterations = it;
        if (prev - loss).abs() < cfg.tolerance {
            break;
        }
        prev = loss;
        for (g, wv) in gw.iter_mut().zip(&w) {
            *g += cfg.l2 * wv;
        }
        let t = it as i32;
        let (bc1, bc2) = (1.0 - f64::powi(beta1, t), 1.0 - f64::powi(beta2, t));
        let step = |v: &mut [f64], g: &[f64], m: &mut [f64], s: &mut [f64]| {
            for j in 0..v.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                s[j] = beta2 * s[j] + (1.0 - beta2) * g[j] * g[j];
                v[j] -= cfg.learning_rate * (m[j] / bc1) / ((s[j] / bc2).sqrt() + eps);
            }
        };
        step(&mut w, &gw, &mut mw, &mut vw);
        step(&mut b, &gb, &mut mb, &mut vb);
    }

    // fold the standardization back into the affine map
    for f in 0..d {
        for k in 0..c {
            w[f * c + k] /= std[f];
        }
    }
    for k in 0..c {
        b[k] -= (0..d).map(|f| mean[f] * w[f * c + k]).sum::<f64>();
    }
    let clf = LinearClassifier {
        n_features: d,
        n_classes: c,
        weights: w,
        bias: b,
        source,
        iterations,
        final_loss: loss,
    };
    if !clf.all_finite() {
        return Err(TrainError::Diverged("classifier parameters became non-finite".into()));
    }
    Ok(clf)
}
