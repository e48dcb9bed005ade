use serde::{Deserialize, Serialize};
use std::fmt;

use super::NnError;

/// Per-sample shape flowing between layers (batch dimension excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleShape {
    /// `(channels, length)` sequence.
    Seq(usize, usize),
    /// Flat feature vector.
    Flat(usize),
}

impl SampleShape {
    pub fn numel(&self) -> usize {
        match *self {
            SampleShape::Seq(c, l) => c * l,
            SampleShape::Flat(f) => f,
        }
    }

    /// Full tensor shape for a batch of `n` samples.
    pub fn batch_dims(&self, n: usize) -> Vec<usize> {
        match *self {
            SampleShape::Seq(c, l) => vec![n, c, l],
            SampleShape::Flat(f) => vec![n, f],
        }
    }
}

impl fmt::Display for SampleShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleShape::Seq(c, l) => write!(f, "(-1, {c}, {l})"),
            SampleShape::Flat(n) => write!(f, "(-1, {n})"),
        }
    }
}

/// One layer of a sequential stack.
///
/// Convolutions are unpadded ("valid"). Transposed convolutions are the exact
/// adjoint of the matching convolution. Unpooling is nearest-neighbour
/// upsampling and needs no switch indices from any encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
    },
    Deconv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    MaxPool1d {
        pool_size: usize,
        stride: usize,
    },
    Unpool1d {
        factor: usize,
    },
    Flatten,
    Reshape {
        channels: usize,
        length: usize,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
        }
    }

    pub fn deconv(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        LayerSpec::Deconv1d {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense {
            in_features,
            out_features,
        }
    }

    pub fn pool2() -> Self {
        LayerSpec::MaxPool1d {
            pool_size: 2,
            stride: 2,
        }
    }

    pub fn unpool2() -> Self {
        LayerSpec::Unpool1d { factor: 2 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Deconv1d { .. } => "deconv1d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::Unpool1d { .. } => "unpool1d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    /// Checks the static invariants (positive sizes).
    pub fn validate(&self) -> Result<(), String> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(format!("{} {what} must be >= 1", self.name()))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
            }
            | LayerSpec::Deconv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
            } => {
                positive("in_channels", in_channels)?;
                positive("out_channels", out_channels)?;
                positive("kernel_size", kernel_size)?;
                positive("stride", stride)
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                positive("in_features", in_features)?;
                positive("out_features", out_features)
            }
            LayerSpec::MaxPool1d { pool_size, stride } => {
                positive("pool_size", pool_size)?;
                positive("stride", stride)
            }
            LayerSpec::Unpool1d { factor } => positive("factor", factor),
            LayerSpec::Reshape { channels, length } => {
                positive("channels", channels)?;
                positive("length", length)
            }
            LayerSpec::Relu | LayerSpec::Flatten => Ok(()),
        }
    }

    /// Shape algebra: the per-sample output shape for a given input shape.
    pub fn output_shape(&self, layer: usize, input: SampleShape) -> Result<SampleShape, NnError> {
        let reject = |reason: String| NnError::LayerShape {
            layer,
            kind: self.name(),
            input,
            reason,
        };
        self.validate().map_err(reject)?;
        match (*self, input) {
            (
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                    stride,
                },
                SampleShape::Seq(c, l),
            ) => {
                if c != in_channels {
                    return Err(reject(format!("expected {in_channels} channels")));
                }
                if l < kernel_size {
                    return Err(reject(format!("length {l} shorter than kernel {kernel_size}")));
                }
                Ok(SampleShape::Seq(out_channels, (l - kernel_size) / stride + 1))
            }
            (
                LayerSpec::Deconv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                    stride,
                },
                SampleShape::Seq(c, l),
            ) => {
                if c != in_channels {
                    return Err(reject(format!("expected {in_channels} channels")));
                }
                if l == 0 {
                    return Err(reject("empty input".into()));
                }
                Ok(SampleShape::Seq(out_channels, (l - 1) * stride + kernel_size))
            }
            (
                LayerSpec::Dense {
                    in_features,
                    out_features,
                },
                SampleShape::Flat(f),
            ) => {
                if f != in_features {
                    return Err(reject(format!("expected {in_features} features")));
                }
                Ok(SampleShape::Flat(out_features))
            }
            (LayerSpec::Relu, s) => Ok(s),
            (LayerSpec::MaxPool1d { pool_size, stride }, SampleShape::Seq(c, l)) => {
                if l < pool_size {
                    return Err(reject(format!("length {l} shorter than pool {pool_size}")));
                }
                Ok(SampleShape::Seq(c, (l - pool_size) / stride + 1))
            }
            (LayerSpec::Unpool1d { factor }, SampleShape::Seq(c, l)) => {
                Ok(SampleShape::Seq(c, l * factor))
            }
            (LayerSpec::Flatten, SampleShape::Seq(c, l)) => Ok(SampleShape::Flat(c * l)),
            (LayerSpec::Flatten, SampleShape::Flat(f)) => Ok(SampleShape::Flat(f)),
            (LayerSpec::Reshape { channels, length }, s) => {
                if s.numel() != channels * length {
                    return Err(reject(format!(
                        "cannot reshape {} elements to ({channels}, {length})",
                        s.numel()
                    )));
                }
                Ok(SampleShape::Seq(channels, length))
            }
            _ => Err(reject("layer does not accept this input rank".into())),
        }
    }

    /// Shapes of the (weight, bias) pair for parametrised layers.
    pub fn parameter_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => Some((vec![out_channels, in_channels, kernel_size], vec![out_channels])),
            LayerSpec::Deconv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => Some((vec![in_channels, out_channels, kernel_size], vec![out_channels])),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    /// Fan-in used for He-style uniform initialisation.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                kernel_size,
                ..
            } => in_channels * kernel_size,
            LayerSpec::Deconv1d {
                in_channels,
                kernel_size,
                stride,
                ..
            } => (in_channels * kernel_size).div_ceil(stride),
            LayerSpec::Dense { in_features, .. } => in_features,
            _ => 0,
        }
    }
}
