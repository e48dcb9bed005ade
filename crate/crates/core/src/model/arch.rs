use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::{infer_shapes, LayerSpec, SampleShape};

use super::ModelError;

/// One encoder stage: `conv(kernel) -> ReLU -> max-pool(2, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub kernel: usize,
    pub channels: usize,
}

/// Layer-chain description shared by both encoders, both decoders and the fusion layer.
///
/// The encoder is `stages` followed by a head convolution without activation
/// whose kernel must collapse the remaining length to 1, then a flatten. Each
/// decoder mirrors the encoder with transposed convolutions and ×2 unpooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub signal_length: usize,
    pub stages: Vec<ConvStage>,
    pub head_kernel: usize,
    pub encoder_width: usize,
    pub fusion_hidden: usize,
    pub latent_dim: usize,
}

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchPreset {
    /// Full-size network for 4800-sample inputs and a 128-wide code layer.
    Paper,
    /// Desk-scale network for 256-sample inputs.
    Compact,
    /// Tiny network for gradient checks (64-sample inputs, 4-wide code).
    Mini,
}

impl ArchPreset {
    pub fn config(self) -> ArchConfig {
        match self {
            ArchPreset::Paper => ArchConfig::paper(),
            ArchPreset::Compact => ArchConfig::compact(),
            ArchPreset::Mini => ArchConfig::mini(),
        }
    }
}

impl std::str::FromStr for ArchPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Self::Paper),
            "compact" => Ok(Self::Compact),
            "mini" => Ok(Self::Mini),
            other => Err(format!("unknown architecture preset `{other}`")),
        }
    }
}

fn stage(kernel: usize, channels: usize) -> ConvStage {
    ConvStage { kernel, channels }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ArchConfig {
    pub fn paper() -> Self {
        Self {
            signal_length: 4800,
            stages: vec![
                stage(11, 10),
                stage(6, 20),
                stage(6, 40),
                stage(6, 60),
                stage(6, 80),
                stage(6, 100),
            ],
            head_kernel: 70,
            encoder_width: 128,
            fusion_hidden: 128,
            latent_dim: 128,
        }
    }

    pub fn compact() -> Self {
        Self {
            signal_length: 256,
            stages: vec![stage(9, 8), stage(5, 16), stage(5, 16), stage(5, 24)],
            head_kernel: 12,
            encoder_width: 32,
            fusion_hidden: 32,
            latent_dim: 32,
        }
    }

    pub fn mini() -> Self {
        Self {
            signal_length: 64,
            stages: vec![stage(5, 2), stage(3, 3)],
            head_kernel: 14,
            encoder_width: 4,
            fusion_hidden: 4,
            latent_dim: 4,
        }
    }

    pub fn encoder_layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut cin = 1;
        for s in &self.stages {
            layers.push(LayerSpec::conv(cin, s.channels, s.kernel));
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::pool2());
            cin = s.channels;
        }
        layers.push(LayerSpec::conv(cin, self.encoder_width, self.head_kernel));
        layers.push(LayerSpec::Flatten);
        layers
    }

    pub fn fusion_layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::dense(2 * self.encoder_width, self.fusion_hidden),
            LayerSpec::Relu,
            LayerSpec::dense(self.fusion_hidden, self.latent_dim),
        ]
    }

    pub fn decoder_layers(&self) -> Vec<LayerSpec> {
        let mut layers = vec![LayerSpec::Reshape {
            channels: self.latent_dim,
            length: 1,
        }];
        let last = self.stages.last().map_or(1, |s| s.channels);
        layers.push(LayerSpec::deconv(self.latent_dim, last, self.head_kernel));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::unpool2());
        for j in (1..self.stages.len()).rev() {
            let (cin, cout) = (self.stages[j].channels, self.stages[j - 1].channels);
            layers.push(LayerSpec::deconv(cin, cout, self.stages[j].kernel));
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::unpool2());
        }
        let first = self.stages.first().map_or(self.head_kernel, |s| s.kernel);
        let c1 = self.stages.first().map_or(last, |s| s.channels);
        layers.push(LayerSpec::deconv(c1, 1, first));
        layers
    }

    pub fn encoder_input(&self) -> SampleShape {
        SampleShape::Seq(1, self.signal_length)
    }

    pub fn fusion_input(&self) -> SampleShape {
        SampleShape::Flat(2 * self.encoder_width)
    }

    pub fn decoder_input(&self) -> SampleShape {
        SampleShape::Flat(self.latent_dim)
    }

    /// Runs the shape algebra on every sub-network and checks that the chain
    /// closes: the encoder collapses to `encoder_width`, and the decoder
    /// returns to `signal_length`.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stages.is_empty() {
            return Err(ModelError::Arch {
                network: "encoder",
                layer: 0,
                reason: "at least one convolution stage is required".into(),
            });
        }
        let arch_err = |network: &'static str| {
            move |e: crate::nn::NnError| match e {
                crate::nn::NnError::LayerShape { layer, reason, .. } => ModelError::Arch {
                    network,
                    layer,
                    reason,
                },
                other => ModelError::Nn(other),
            }
        };
        let enc_layers = self.encoder_layers();
        let enc = infer_shapes(self.encoder_input(), &enc_layers).map_err(arch_err("encoder"))?;
        if *enc.last().unwrap() != SampleShape::Flat(self.encoder_width) {
            return Err(ModelError::Arch {
                network: "encoder",
                layer: enc_layers.len() - 2,
                reason: format!(
                    "head convolution leaves {} instead of length 1",
                    enc[enc.len() - 2]
                ),
            });
        }
        infer_shapes(self.fusion_input(), &self.fusion_layers()).map_err(arch_err("fusion"))?;
        let dec_layers = self.decoder_layers();
        let dec = infer_shapes(self.decoder_input(), &dec_layers).map_err(arch_err("decoder"))?;
        // first decoder layer whose output departs from the mirrored encoder length
        let expected = SampleShape::Seq(1, self.signal_length);
        if *dec.last().unwrap() != expected {
            let mirror: Vec<usize> = enc
                .iter()
                .filter_map(|s| match s {
                    SampleShape::Seq(_, l) => Some(*l),
                    SampleShape::Flat(_) => None,
                })
                .collect();
            let layer = dec
                .iter()
                .enumerate()
                .skip(1)
                .find_map(|(i, s)| match s {
                    SampleShape::Seq(_, l) if !mirror.contains(l) => Some(i - 1),
                    _ => None,
                })
                .unwrap_or(dec_layers.len() - 1);
            return Err(ModelError::Arch {
                network: "decoder",
                layer,
                reason: format!("decoder ends at {} instead of {expected}", dec.last().unwrap()),
            });
        }
        Ok(())
    }

    /// Stable fingerprint of the architecture (SHA-256 of its canonical JSON).
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("architecture serialises");
        Sha256::digest(&json).into()
    }
}
