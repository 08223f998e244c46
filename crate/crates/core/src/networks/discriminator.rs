use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{instance_norm, leaky_relu, Conv2d, ConvSpec, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    /// Instance normalization on the hidden layers. Off by default so every
    /// score depends only on its own receptive field.
    #[serde(default)]
    pub instance_norm: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            instance_norm: false,
        }
    }
}

/// The 70×70 PatchGAN: three stride-2 and two stride-1 kernel-4 convolutions.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    layers: Vec<Conv2d>,
    instance_norm: bool,
}

const STRIDES: [usize; 5] = [2, 2, 2, 1, 1];

impl PatchDiscriminator {
    pub fn new(scope: &Scope, cfg: &DiscriminatorConfig) -> Result<Self> {
        let b = cfg.base_channels;
        let widths = [3, b, 2 * b, 4 * b, 8 * b, 1];
        let layers = STRIDES
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                Conv2d::new(
                    &scope.pp(&i.to_string()),
                    widths[i],
                    widths[i + 1],
                    ConvSpec::strided(4, s, 1),
                    true,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            instance_norm: cfg.instance_norm,
        })
    }

    /// Receptive field (in input pixels) of one output score.
    pub fn receptive_field() -> usize {
        STRIDES.iter().rev().fold(1, |rf, &s| (rf - 1) * s + 4)
    }

    /// Input rows `[start, end]` (inclusive, may extend into padding) seen by output row `o`.
    pub fn receptive_window(o: usize) -> (isize, isize) {
        let (mut lo, mut hi) = (o as isize, o as isize);
        for &s in STRIDES.iter().rev() {
            lo = lo * s as isize - 1;
            hi = hi * s as isize - 1 + 3;
        }
        (lo, hi)
    }

    pub fn output_size(input: usize) -> usize {
        STRIDES
            .iter()
            .fold(input, |n, &s| ConvSpec::strided(4, s, 1).output_size(n))
    }

    /// Unbounded per-patch realness scores, `B×1×h'×w'`.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = image.dims4()?;
        if c != 3 || Self::output_size(h) == 0 || Self::output_size(w) == 0 {
            return Err(Error::dim(format!("discriminator input {c}×{h}×{w} is too small")));
        }
        let last = self.layers.len() - 1;
        let mut x = image.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i < last {
                if self.instance_norm && i > 0 {
                    x = instance_norm(&x)?;
                }
                x = leaky_relu(&x, 0.2)?;
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_field_arithmetic() {
        assert_eq!(PatchDiscriminator::receptive_field(), 70);
        assert_eq!(PatchDiscriminator::output_size(256), 30);
        let (lo, hi) = PatchDiscriminator::receptive_window(0);
        assert_eq!(hi - lo + 1, 70);
        assert_eq!((lo, hi), (-23, 46));
    }
}
