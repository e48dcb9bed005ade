use rand::Rng;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::kernels::{self, ConvDims};
use super::{LayerSpec, NnError, ParameterStore, SampleShape, Tensor};

/// A sequential chain of layers whose parameters live in a shared [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Stack {
    name: String,
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output shape.
    shapes: Vec<SampleShape>,
    /// (weight slot, bias slot) for parametrised layers.
    slots: Vec<Option<(usize, usize)>>,
    id: u64,
}

/// Everything a forward pass retains for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    stack_id: u64,
    generation: u64,
    values: Vec<Tensor>,
    switches: Vec<Option<Vec<u32>>>,
}

impl Activations {
    pub fn input(&self) -> &Tensor {
        &self.values[0]
    }

    pub fn output(&self) -> &Tensor {
        self.values.last().expect("activations always hold the input")
    }

    pub fn into_output(mut self) -> Tensor {
        self.values.pop().expect("activations always hold the input")
    }

    /// Output of every layer, in order (index 0 is the stack input).
    pub fn all(&self) -> &[Tensor] {
        &self.values
    }
}

/// Runs the shape algebra over a chain, rejecting at the first violating layer.
pub fn infer_shapes(input: SampleShape, layers: &[LayerSpec]) -> Result<Vec<SampleShape>, NnError> {
    let mut shapes = Vec::with_capacity(layers.len() + 1);
    shapes.push(input);
    let mut cur = input;
    for (i, layer) in layers.iter().enumerate() {
        cur = layer.output_shape(i, cur)?;
        shapes.push(cur);
    }
    Ok(shapes)
}

impl Stack {
    /// Validates the chain and registers He-uniform initialised parameters.
    pub fn build<R: Rng + ?Sized>(
        name: &str,
        input: SampleShape,
        layers: Vec<LayerSpec>,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let shapes = infer_shapes(input, &layers)?;
        let mut slots = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            slots.push(layer.parameter_shapes().map(|(ws, bs)| {
                let bound = (6.0 / layer.fan_in() as f64).sqrt();
                let n: usize = ws.iter().product();
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                let b = vec![0.0; bs.iter().product()];
                let wslot = store.add(format!("{name}.{i}.weight"), &ws, w);
                let bslot = store.add(format!("{name}.{i}.bias"), &bs, b);
                (wslot, bslot)
            }));
        }
        let mut h = DefaultHasher::new();
        name.hash(&mut h);
        layers.hash(&mut h);
        slots.hash(&mut h);
        Ok(Self {
            name: name.to_string(),
            layers,
            shapes,
            slots,
            id: h.finish(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Input shape of every layer followed by the final output shape.
    pub fn shapes(&self) -> &[SampleShape] {
        &self.shapes
    }

    pub fn input_shape(&self) -> SampleShape {
        self.shapes[0]
    }

    pub fn output_shape(&self) -> SampleShape {
        *self.shapes.last().unwrap()
    }

    pub fn parameter_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().flatten().flat_map(|&(w, b)| [w, b])
    }

    pub fn num_parameters(&self, store: &ParameterStore) -> usize {
        self.parameter_slots().map(|s| store.get(s).len()).sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<usize, NnError> {
        let n = input.batch();
        let expected = self.input_shape().batch_dims(n);
        if input.shape() != expected.as_slice() || n == 0 {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                expected,
                found: input.shape().to_vec(),
            });
        }
        Ok(n)
    }

    pub fn forward(&self, store: &ParameterStore, input: &Tensor) -> Result<Activations, NnError> {
        let n = self.check_input(input)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut switches = Vec::with_capacity(self.layers.len());
        values.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = values.last().unwrap();
            let (y, sw) = self.layer_forward(i, layer, store, x, n)?;
            values.push(y);
            switches.push(sw);
        }
        Ok(Activations {
            stack_id: self.id,
            generation: store.generation(),
            values,
            switches,
        })
    }

    /// Forward pass that keeps only the output.
    pub fn infer(&self, store: &ParameterStore, input: &Tensor) -> Result<Tensor, NnError> {
        let n = self.check_input(input)?;
        let mut cur = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = self.layer_forward(i, layer, store, &cur, n)?.0;
        }
        Ok(cur)
    }

    fn layer_forward(
        &self,
        i: usize,
        layer: &LayerSpec,
        store: &ParameterStore,
        x: &Tensor,
        n: usize,
    ) -> Result<(Tensor, Option<Vec<u32>>), NnError> {
        let out_dims = self.shapes[i + 1].batch_dims(n);
        let (data, sw) = match *layer {
            LayerSpec::Conv1d { .. } | LayerSpec::Deconv1d { .. } => {
                let (ws, bs) = self.slots[i].unwrap();
                let d = self.conv_dims(i, n);
                let y = if matches!(layer, LayerSpec::Conv1d { .. }) {
                    kernels::conv1d_forward(x.data(), store.value(ws), store.value(bs), &d)
                } else {
                    kernels::deconv1d_forward(x.data(), store.value(ws), store.value(bs), &d)
                };
                (y, None)
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let (ws, bs) = self.slots[i].unwrap();
                let y = kernels::dense_forward(
                    x.data(),
                    store.value(ws),
                    store.value(bs),
                    n,
                    in_features,
                    out_features,
                );
                (y, None)
            }
            LayerSpec::Relu => (x.data().iter().map(|v| v.max(0.0)).collect(), None),
            LayerSpec::MaxPool1d { pool_size, stride } => {
                let SampleShape::Seq(c, l) = self.shapes[i] else {
                    unreachable!("shape algebra admits only sequences here")
                };
                let (y, arg) = kernels::maxpool_forward(x.data(), n * c, l, pool_size, stride);
                (y, Some(arg))
            }
            LayerSpec::Unpool1d { factor } => (kernels::unpool_forward(x.data(), factor), None),
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => (x.data().to_vec(), None),
        };
        Ok((Tensor::from_vec(&out_dims, data)?, sw))
    }

    fn conv_dims(&self, i: usize, n: usize) -> ConvDims {
        let (SampleShape::Seq(cin, lin), SampleShape::Seq(cout, lout)) =
            (self.shapes[i], self.shapes[i + 1])
        else {
            unreachable!("convolutions map sequences to sequences")
        };
        let (k, stride) = match self.layers[i] {
            LayerSpec::Conv1d {
                kernel_size,
                stride,
                ..
            }
            | LayerSpec::Deconv1d {
                kernel_size,
                stride,
                ..
            } => (kernel_size, stride),
            _ => unreachable!(),
        };
        ConvDims {
            n,
            cin,
            lin,
            cout,
            lout,
            k,
            stride,
        }
    }

    /// Accumulates parameter gradients into `store` and returns the input gradient.
    pub fn backward(
        &self,
        store: &mut ParameterStore,
        acts: &Activations,
        grad_output: &Tensor,
    ) -> Result<Tensor, NnError> {
        self.backward_impl(store, acts, grad_output, true)
            .map(|g| g.expect("input gradient requested"))
    }

    /// Like [`Stack::backward`] but skips the input gradient of the first layer.
    pub fn accumulate_gradients(
        &self,
        store: &mut ParameterStore,
        acts: &Activations,
        grad_output: &Tensor,
    ) -> Result<(), NnError> {
        self.backward_impl(store, acts, grad_output, false).map(|_| ())
    }

    fn backward_impl(
        &self,
        store: &mut ParameterStore,
        acts: &Activations,
        grad_output: &Tensor,
        want_input_grad: bool,
    ) -> Result<Option<Tensor>, NnError> {
        if acts.stack_id != self.id
            || acts.generation != store.generation()
            || acts.values.len() != self.layers.len() + 1
        {
            return Err(NnError::StaleActivations {
                stack: self.name.clone(),
            });
        }
        if grad_output.shape() != acts.output().shape() {
            return Err(NnError::ShapeMismatch {
                layer: self.layers.len(),
                expected: acts.output().shape().to_vec(),
                found: grad_output.shape().to_vec(),
            });
        }
        let n = acts.input().batch();
        let mut g = grad_output.data().to_vec();
        for i in (0..self.layers.len()).rev() {
            let x = &acts.values[i];
            let need_gx = want_input_grad || i > 0;
            g = match self.layers[i] {
                LayerSpec::Conv1d { .. } | LayerSpec::Deconv1d { .. } => {
                    let (ws, bs) = self.slots[i].unwrap();
                    let d = self.conv_dims(i, n);
                    let mut gx = if need_gx { vec![0.0; x.data().len()] } else { Vec::new() };
                    let (w, gw, gb) = store.layer_buffers_mut(ws, bs);
                    let gx_opt = if need_gx { Some(gx.as_mut_slice()) } else { None };
                    if matches!(self.layers[i], LayerSpec::Conv1d { .. }) {
                        kernels::conv1d_backward(x.data(), w, &g, &d, gw, gb, gx_opt);
                    } else {
                        kernels::deconv1d_backward(x.data(), w, &g, &d, gw, gb, gx_opt);
                    }
                    gx
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let (ws, bs) = self.slots[i].unwrap();
                    let mut gx = if need_gx { vec![0.0; x.data().len()] } else { Vec::new() };
                    let (w, gw, gb) = store.layer_buffers_mut(ws, bs);
                    let gx_opt = if need_gx { Some(gx.as_mut_slice()) } else { None };
                    kernels::dense_backward(
                        x.data(),
                        w,
                        &g,
                        n,
                        in_features,
                        out_features,
                        gw,
                        gb,
                        gx_opt,
                    );
                    gx
                }
                LayerSpec::Relu => g
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect(),
                LayerSpec::MaxPool1d { .. } => {
                    let arg = acts.switches[i]
                        .as_ref()
                        .ok_or_else(|| NnError::StaleActivations {
                            stack: self.name.clone(),
                        })?;
                    let mut gx = vec![0.0; x.data().len()];
                    for (gv, &a) in g.iter().zip(arg) {
                        gx[a as usize] += gv;
                    }
                    gx
                }
                LayerSpec::Unpool1d { factor } => kernels::unpool_backward(&g, factor),
                LayerSpec::Flatten | LayerSpec::Reshape { .. } => g,
            };
        }
        if want_input_grad {
            Ok(Some(Tensor::from_vec(acts.input().shape(), g)?))
        } else {
            Ok(None)
        }
    }
}
