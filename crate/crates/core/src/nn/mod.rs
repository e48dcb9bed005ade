//! Minimal differentiable operator set: 1-D (transposed) convolution, max-pool,
//! nearest-neighbour unpool, dense and ReLU layers, plus ADAM and a
//! finite-difference gradient checker.
//!
//! Tensors are plain row-major `f64` buffers. A [`Stack`] records the layer
//! chain and the slots of its parameters inside a [`ParameterStore`]; several
//! stacks can share one store, which is how the autoencoder keeps all of its
//! sub-networks under a single optimizer.

mod gradcheck;
mod kernels;
mod layer;
mod params;
mod stack;
mod tensor;

pub use gradcheck::{
    check_gradients, check_gradients_tampered, check_with, relative_error, BlockError,
    GradCheckReport, FD_STEP,
};
pub use layer::{LayerSpec, SampleShape};
pub use params::{AdamConfig, Parameter, ParameterStore};
pub use stack::{infer_shapes, Activations, Stack};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer} ({kind}) rejects input {input}: {reason}")]
    LayerShape {
        layer: usize,
        kind: &'static str,
        input: SampleShape,
        reason: String,
    },
    #[error("shape mismatch at layer {layer}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("buffer of {len} elements does not fit shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("activations for stack `{stack}` are stale or missing")]
    StaleActivations { stack: String },
    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("invalid optimizer setting {field} = {value}")]
    InvalidConfig { field: &'static str, value: f64 },
    #[error("parameter snapshot does not match the store layout")]
    SnapshotMismatch,
}
