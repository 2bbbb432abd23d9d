//! Desk-scale convolutional feature encoder and the two projection heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FbrError, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    /// Output channel count of the final block (`L`).
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Total spatial reduction; one of 1, 2, 4, 8.
    #[serde(default = "default_downsample")]
    pub downsample_factor: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_in_channels() -> usize {
    3
}
fn default_feature_dim() -> usize {
    64
}
fn default_downsample() -> usize {
    4
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: default_in_channels(),
            feature_dim: default_feature_dim(),
            downsample_factor: default_downsample(),
            rng_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(FbrError::Config("feature_dim must be >= 1".into()));
        }
        if self.in_channels == 0 {
            return Err(FbrError::Config("in_channels must be >= 1".into()));
        }
        if !matches!(self.downsample_factor, 1 | 2 | 4 | 8) {
            return Err(FbrError::Config(format!(
                "downsample_factor must be one of 1, 2, 4, 8; got {}",
                self.downsample_factor
            )));
        }
        Ok(())
    }

    fn stride_schedule(&self) -> [usize; 3] {
        match self.downsample_factor {
            1 => [1, 1, 1],
            2 => [2, 1, 1],
            4 => [2, 2, 1],
            8 => [2, 2, 2],
            _ => unreachable!("validated"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl ConvLayer {
    fn new(in_c: usize, out_c: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_c * 9;
        Self {
            weight: Tensor::uniform_fan_in(&[out_c, in_c, 3, 3], fan_in, rng).with_grad(),
            bias: Tensor::uniform_fan_in(&[out_c], fan_in, rng).with_grad(),
            stride,
        }
    }
}

/// Three rectified 3x3 convolution blocks producing the semantic feature map.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub blocks: Vec<ConvLayer>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let l = config.feature_dim;
        let widths = [config.in_channels, (l / 4).max(2), (l / 2).max(2), l];
        let strides = config.stride_schedule();
        let blocks = (0..3)
            .map(|i| ConvLayer::new(widths[i], widths[i + 1], strides[i], &mut rng))
            .collect();
        Ok(Self { config, blocks })
    }

    /// Forward pass to the semantic feature map, returned as an
    /// `[L, H/ds, W/ds]` node.
    pub fn encode(&self, g: &mut Graph, image: &Tensor) -> Result<Var> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != self.config.in_channels {
            return Err(FbrError::InvalidArgument(format!(
                "expected [{}, H, W] image, got {:?}",
                self.config.in_channels, shape
            )));
        }
        let ds = self.config.downsample_factor;
        if shape[1] % ds != 0 || shape[2] % ds != 0 {
            return Err(FbrError::InvalidArgument(format!(
                "spatial extents {}x{} not divisible by downsample factor {}",
                shape[1], shape[2], ds
            )));
        }
        let mut x = g.leaf(image);
        for block in &self.blocks {
            let w = g.leaf(&block.weight);
            let b = g.leaf(&block.bias);
            let y = g.conv2d(x, w, b, block.stride);
            x = g.relu(y);
        }
        Ok(x)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                [
                    (format!("enc.conv{}.weight", i + 1), &b.weight),
                    (format!("enc.conv{}.bias", i + 1), &b.bias),
                ]
            })
            .collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| {
                [
                    (format!("enc.conv{}.weight", i + 1), &mut b.weight),
                    (format!("enc.conv{}.bias", i + 1), &mut b.bias),
                ]
            })
            .collect()
    }
}

/// Per-pixel affine map (a 1x1 convolution) followed by rectification.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub weight: Tensor,
    pub bias: Tensor,
    pub output_dim: usize,
}

impl ProjectionHead {
    pub fn new(input_dim: usize, output_dim: usize, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        Self {
            weight: Tensor::uniform_fan_in(&[output_dim, input_dim], input_dim, &mut rng).with_grad(),
            bias: Tensor::uniform_fan_in(&[output_dim], input_dim, &mut rng).with_grad(),
            output_dim,
        }
    }

    /// Map an `[L, P]` feature matrix to a rectified `[D, P]` representation.
    pub fn project(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let fdims = g.dims(features);
        if fdims.len() != 2 || fdims[0] != self.weight.shape()[1] {
            return Err(FbrError::InvalidArgument(format!(
                "projection expects [{}, P] features, got {:?}",
                self.weight.shape()[1],
                fdims
            )));
        }
        let w = g.leaf(&self.weight);
        let b = g.leaf(&self.bias);
        let mapped = g.matmul(w, features);
        let biased = g.add_row_bias(mapped, b);
        Ok(g.relu(biased))
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.weight"), &self.weight),
            (format!("{prefix}.bias"), &self.bias),
        ]
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.weight"), &mut self.weight),
            (format!("{prefix}.bias"), &mut self.bias),
        ]
    }
}

/// Flatten an `[C, H, W]` node into the `[C, H*W]` matrix view used by the
/// projection and classification paths.
pub fn as_matrix(g: &mut Graph, features: Var) -> Var {
    let d = g.dims(features).to_vec();
    assert_eq!(d.len(), 3, "expected [C, H, W] node");
    g.reshape(features, &[d[0], d[1] * d[2]])
}
