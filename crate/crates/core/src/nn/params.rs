use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::NnError;

/// A named trainable tensor with its gradient and ADAM moment buffers.
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled (AdamW-style) weight decay coefficient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |field: &'static str, value: f64| Err(NnError::InvalidConfig { field, value });
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate", self.learning_rate);
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad("beta1", self.beta1);
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta2", self.beta2);
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon", self.epsilon);
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", self.weight_decay);
        }
        Ok(())
    }
}

/// Ordered collection of every trainable tensor of a model.
///
/// `generation` changes whenever parameter values change, so activations
/// recorded against an older state can be detected and rejected.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    step: u64,
    generation: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its slot index.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> usize {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        self.params.push(Parameter {
            name: name.into(),
            shape: shape.to_vec(),
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.generation += 1;
        self.params.len() - 1
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn get(&self, slot: usize) -> &Parameter {
        &self.params[slot]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn value(&self, slot: usize) -> &[f64] {
        &self.params[slot].value
    }

    /// Mutable access to parameter values; invalidates outstanding activations.
    pub fn value_mut(&mut self, slot: usize) -> &mut [f64] {
        self.generation += 1;
        &mut self.params[slot].value
    }

    pub fn grad(&self, slot: usize) -> &[f64] {
        &self.params[slot].grad
    }

    pub fn grad_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.params[slot].grad
    }

    /// Weight values plus weight and bias gradient buffers of one layer.
    pub(crate) fn layer_buffers_mut(
        &mut self,
        weight: usize,
        bias: usize,
    ) -> (&[f64], &mut [f64], &mut [f64]) {
        assert!(weight < bias, "bias slots are registered after their weight");
        let (head, tail) = self.params.split_at_mut(bias);
        let w = &mut head[weight];
        (&w.value, &mut w.grad, &mut tail[0].grad)
    }

    pub fn param_mut(&mut self, slot: usize) -> &mut Parameter {
        &mut self.params[slot]
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grad(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|x| x.is_finite()))
    }

    /// Snapshot of all parameter values, in slot order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) -> Result<(), NnError> {
        if snapshot.len() != self.params.len() {
            return Err(NnError::SnapshotMismatch);
        }
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            if p.value.len() != s.len() {
                return Err(NnError::SnapshotMismatch);
            }
            p.value.copy_from_slice(s);
        }
        self.generation += 1;
        Ok(())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for d in &p.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for x in &p.value {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// One ADAM step with bias correction and decoupled weight decay.
    ///
    /// Fails without touching any value if a gradient is non-finite.
    pub fn adam_update(&mut self, cfg: &AdamConfig) -> Result<(), NnError> {
        cfg.validate()?;
        if let Some(p) = self
            .params
            .iter()
            .find(|p| p.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(NnError::NonFiniteGradient {
                name: p.name.clone(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let lr = cfg.learning_rate;
        let wd = cfg.weight_decay;
        for p in &mut self.params {
            for (((x, g), m), v) in p
                .value
                .iter_mut()
                .zip(&p.grad)
                .zip(&mut p.m)
                .zip(&mut p.v)
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + wd * *x);
            }
        }
        self.generation += 1;
        Ok(())
    }
}
