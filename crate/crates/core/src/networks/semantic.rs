use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{instance_norm, leaky_relu, sigmoid, subsample, upsample_nearest, Conv2d, ConvSpec, Init, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticDecoderConfig {
    /// Output width of each residual block; the block count is its length.
    pub block_channels: Vec<usize>,
    /// Width of the shared hidden layer of every modulation head.
    pub spade_hidden: usize,
}

impl Default for SemanticDecoderConfig {
    fn default() -> Self {
        Self {
            block_channels: vec![256, 128, 64],
            spade_hidden: 128,
        }
    }
}

/// Instance normalization modulated per pixel by a semantic map:
/// `γ(s) ⊙ x̂ + β(s)`, with `γ`, `β` from a two-layer conv head on the one-hot map.
#[derive(Debug, Clone)]
pub struct SpadeLayer {
    shared: Conv2d,
    gamma: Conv2d,
    beta: Conv2d,
}

impl SpadeLayer {
    pub fn new(scope: &Scope, channels: usize, num_classes: usize, hidden: usize) -> Result<Self> {
        let shared = Conv2d::new(&scope.pp("shared"), num_classes, hidden, ConvSpec::same(3), true)?;
        let gamma = head(&scope.pp("gamma"), hidden, channels, 1.0)?;
        let beta = head(&scope.pp("beta"), hidden, channels, 0.0)?;
        Ok(Self { shared, gamma, beta })
    }

    pub fn from_parts(shared: Conv2d, gamma: Conv2d, beta: Conv2d) -> Self {
        Self { shared, gamma, beta }
    }

    /// `γ(s)` and `β(s)` at the resolution of `segmap`.
    pub fn modulation(&self, segmap: &Tensor) -> Result<(Tensor, Tensor)> {
        let actv = self.shared.forward(segmap)?.relu()?;
        Ok((self.gamma.forward(&actv)?, self.beta.forward(&actv)?))
    }

    /// `segmap` is a one-hot map at any integer multiple of `x`'s resolution.
    pub fn forward(&self, x: &Tensor, segmap: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let seg = subsample(segmap, h, w)?;
        let (gamma, beta) = self.modulation(&seg)?;
        if gamma.dims() != x.dims() {
            return Err(Error::dim(format!(
                "modulation {:?} does not match activations {:?}",
                gamma.dims(),
                x.dims()
            )));
        }
        Ok(((instance_norm(x)? * gamma)? + beta)?)
    }
}

fn head(scope: &Scope, hidden: usize, channels: usize, bias: f64) -> Result<Conv2d> {
    let weight = scope.var("weight", &[channels, hidden, 3, 3], Init::FanIn(hidden * 9))?;
    let b = scope.var("bias", &[channels], Init::Const(bias))?;
    Ok(Conv2d::from_tensors(weight, Some(b), ConvSpec::same(3)))
}

/// Residual block with SPADE before each convolution and a learned shortcut
/// when the width changes.
#[derive(Debug, Clone)]
pub struct SpadeResBlock {
    norm0: SpadeLayer,
    conv0: Conv2d,
    norm1: SpadeLayer,
    conv1: Conv2d,
    shortcut: Option<(SpadeLayer, Conv2d)>,
}

impl SpadeResBlock {
    pub fn new(scope: &Scope, cin: usize, cout: usize, num_classes: usize, hidden: usize) -> Result<Self> {
        let mid = cin.min(cout);
        let shortcut = if cin != cout {
            Some((
                SpadeLayer::new(&scope.pp("norm_s"), cin, num_classes, hidden)?,
                Conv2d::new(&scope.pp("conv_s"), cin, cout, ConvSpec::same(1), false)?,
            ))
        } else {
            None
        };
        Ok(Self {
            norm0: SpadeLayer::new(&scope.pp("norm0"), cin, num_classes, hidden)?,
            conv0: Conv2d::new(&scope.pp("conv0"), cin, mid, ConvSpec::same(3), true)?,
            norm1: SpadeLayer::new(&scope.pp("norm1"), mid, num_classes, hidden)?,
            conv1: Conv2d::new(&scope.pp("conv1"), mid, cout, ConvSpec::same(3), true)?,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor, segmap: &Tensor) -> Result<Tensor> {
        let skip = match &self.shortcut {
            Some((norm, conv)) => conv.forward(&norm.forward(x, segmap)?)?,
            None => x.clone(),
        };
        let dx = self.conv0.forward(&leaky_relu(&self.norm0.forward(x, segmap)?, 0.2)?)?;
        let dx = self.conv1.forward(&leaky_relu(&self.norm1.forward(&dx, segmap)?, 0.2)?)?;
        Ok((skip + dx)?)
    }
}

/// Maps bottleneck features and a one-hot semantic map back to an image.
/// The last two blocks run after a 2× nearest upsample each.
#[derive(Debug, Clone)]
pub struct SemanticDecoder {
    blocks: Vec<SpadeResBlock>,
    output: Conv2d,
    num_classes: usize,
    in_channels: usize,
}

impl SemanticDecoder {
    pub fn new(
        scope: &Scope,
        cfg: &SemanticDecoderConfig,
        in_channels: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if cfg.block_channels.len() < 2 {
            return Err(Error::Parameter("semantic decoder needs at least 2 blocks".into()));
        }
        let mut blocks = Vec::new();
        let mut cin = in_channels;
        for (i, &cout) in cfg.block_channels.iter().enumerate() {
            blocks.push(SpadeResBlock::new(
                &scope.pp(&format!("block{i}")),
                cin,
                cout,
                num_classes,
                cfg.spade_hidden,
            )?);
            cin = cout;
        }
        let output = Conv2d::new(&scope.pp("output"), cin, 3, ConvSpec::same(3), true)?;
        Ok(Self {
            blocks,
            output,
            num_classes,
            in_channels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `features`: `B×c×H/4×W/4`; `segmap`: one-hot `B×K×H×W`.
    pub fn forward(&self, features: &Tensor, segmap: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = features.dims4()?;
        let (sb, k, sh, sw) = segmap.dims4()?;
        if k != self.num_classes {
            return Err(Error::Parameter(format!(
                "decoder configured for {} classes, semantic map has {k}",
                self.num_classes
            )));
        }
        if c != self.in_channels || sb != b || (sh, sw) != (4 * h, 4 * w) {
            return Err(Error::dim(format!(
                "features {:?} and semantic map {:?} do not line up",
                features.dims(),
                segmap.dims()
            )));
        }
        let n = self.blocks.len();
        let mut x = features.clone();
        let (mut ch, mut cw) = (h, w);
        for (i, block) in self.blocks.iter().enumerate() {
            if i + 2 >= n {
                ch *= 2;
                cw *= 2;
                x = upsample_nearest(&x, ch, cw)?;
            }
            x = block.forward(&x, segmap)?;
        }
        sigmoid(&self.output.forward(&leaky_relu(&x, 0.2)?)?)
    }
}
