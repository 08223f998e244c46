use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::espa::{AttentionNormalization, Espa, EspaConfig, ExternalActivation};
use crate::imaging::{BinaryMask, Image};
use crate::nn::{self, instance_norm, sigmoid, Conv2d, ConvSpec, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub base_channels: usize,
    /// Channel count `c` of the bottleneck features.
    pub bottleneck_channels: usize,
    pub dilation_rates: Vec<usize>,
    /// Set to false for the plain autoencoder (dilated branch only).
    pub use_espa: bool,
    /// Hidden width of the key operator; `None` means `min(h, w)` at the bottleneck.
    pub espa_key_hidden: Option<usize>,
    pub espa_value_hidden: Option<usize>,
    #[serde(default)]
    pub espa_activation: ExternalActivation,
    #[serde(default)]
    pub espa_normalization: AttentionNormalization,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            bottleneck_channels: 256,
            dilation_rates: vec![2, 4, 8, 16],
            use_espa: true,
            espa_key_hidden: None,
            espa_value_hidden: None,
            espa_activation: ExternalActivation::Relu,
            espa_normalization: AttentionNormalization::None,
        }
    }
}

impl AutoencoderConfig {
    pub fn espa_config(&self, height: usize, width: usize) -> EspaConfig {
        let mut cfg = EspaConfig::new(self.bottleneck_channels, height / 4, width / 4);
        if let Some(d) = self.espa_key_hidden {
            cfg.key_hidden = d;
        }
        if let Some(d) = self.espa_value_hidden {
            cfg.value_hidden = d;
        }
        cfg.activation = self.espa_activation;
        cfg.normalization = self.espa_normalization;
        cfg
    }
}

/// Convolution followed by instance normalization and ReLU.
#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    norm: bool,
}

impl ConvBlock {
    fn new(scope: &Scope, cin: usize, cout: usize, spec: ConvSpec) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&scope.pp("conv"), cin, cout, spec, true)?,
            norm: true,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        let y = if self.norm { instance_norm(&y)? } else { y };
        Ok(y.relu()?)
    }
}

/// Stage-one output: the coarse image and the fused bottleneck features `F_c`.
#[derive(Debug, Clone)]
pub struct CoarseOutput {
    pub coarse: Tensor,
    pub features: Tensor,
}

/// Encoder (×4 downsampling), two-branch bottleneck, decoder.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    encoder: Vec<ConvBlock>,
    dilated: Vec<ConvBlock>,
    espa: Option<Espa>,
    decoder: Vec<ConvBlock>,
    output: Conv2d,
    height: usize,
    width: usize,
}

impl Autoencoder {
    pub fn new(scope: &Scope, cfg: &AutoencoderConfig, height: usize, width: usize) -> Result<Self> {
        if !height.is_multiple_of(4) || !width.is_multiple_of(4) {
            return Err(Error::dim(format!("{height}×{width} is not divisible by 4")));
        }
        let (b, c) = (cfg.base_channels, cfg.bottleneck_channels);
        let enc = scope.pp("encoder");
        // Input is the masked image concatenated with the mask.
        let encoder = vec![
            ConvBlock::new(&enc.pp("0"), 4, b, ConvSpec::same(5))?,
            ConvBlock::new(&enc.pp("1"), b, 2 * b, ConvSpec::strided(4, 2, 1))?,
            ConvBlock::new(&enc.pp("2"), 2 * b, c, ConvSpec::strided(4, 2, 1))?,
        ];
        let dil = scope.pp("dilated");
        let dilated = cfg
            .dilation_rates
            .iter()
            .enumerate()
            .map(|(i, &r)| ConvBlock::new(&dil.pp(&i.to_string()), c, c, ConvSpec::dilated(3, r)))
            .collect::<Result<Vec<_>>>()?;
        let espa = if cfg.use_espa {
            Some(Espa::new(&scope.pp("espa"), &cfg.espa_config(height, width))?)
        } else {
            None
        };
        let dec = scope.pp("decoder");
        let decoder = vec![
            ConvBlock::new(&dec.pp("0"), c, 2 * b, ConvSpec::same(3))?,
            ConvBlock::new(&dec.pp("1"), 2 * b, b, ConvSpec::same(3))?,
        ];
        let output = Conv2d::new(&scope.pp("output"), b, 3, ConvSpec::same(3), true)?;
        Ok(Self {
            encoder,
            dilated,
            espa,
            decoder,
            output,
            height,
            width,
        })
    }

    pub fn has_espa(&self) -> bool {
        self.espa.is_some()
    }

    pub fn espa(&self) -> Option<&Espa> {
        self.espa.as_ref()
    }

    /// Bottleneck features `F_in` of a masked input.
    pub fn encode(&self, image_in: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mut x = Tensor::cat(&[image_in, mask], 1)?;
        for block in &self.encoder {
            x = block.forward(&x)?;
        }
        Ok(x)
    }

    /// Two-branch bottleneck: the dilated stack and the ESPA branch, fused by sum.
    pub fn bottleneck(&self, f_in: &Tensor, image_in: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mut dilated = f_in.clone();
        for block in &self.dilated {
            dilated = block.forward(&dilated)?;
        }
        match &self.espa {
            Some(espa) => Ok((dilated + espa.forward(f_in, image_in, mask)?)?),
            None => Ok(dilated),
        }
    }

    pub fn decode(&self, features: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = features.dims4()?;
        let mut x = features.clone();
        for (i, block) in self.decoder.iter().enumerate() {
            let scale = 1 << (i + 1);
            x = block.forward(&nn::upsample_nearest(&x, h * scale, w * scale)?)?;
        }
        sigmoid(&self.output.forward(&x)?)
    }

    /// `B×3×H×W` masked images and `B×1×H×W` masks to the coarse result and `F_c`.
    pub fn forward(&self, image_in: &Tensor, mask: &Tensor) -> Result<CoarseOutput> {
        let (_, c, h, w) = image_in.dims4()?;
        if c != 3 || (h, w) != (self.height, self.width) {
            return Err(Error::dim(format!(
                "autoencoder expects 3×{}×{} inputs, got {c}×{h}×{w}",
                self.height, self.width
            )));
        }
        if mask.dims4()? != (image_in.dims()[0], 1, h, w) {
            return Err(Error::dim(format!("mask shape {:?} does not match input", mask.dims())));
        }
        let f_in = self.encode(image_in, mask)?;
        let features = self.bottleneck(&f_in, image_in, mask)?;
        let coarse = self.decode(&features)?;
        Ok(CoarseOutput { coarse, features })
    }

    /// Single-image convenience wrapper. `image_in` must already be masked.
    pub fn coarse_inpaint(&self, image_in: &Image, mask: &BinaryMask) -> Result<(Image, Tensor)> {
        let dtype = self.output.weight().dtype();
        let dev = self.output.weight().device().clone();
        let x = nn::image_to_tensor(image_in, dtype, &dev)?;
        let m = nn::mask_to_tensor(mask, dtype, &dev)?;
        let out = self.forward(&x, &m)?;
        Ok((nn::tensor_to_image(&out.coarse)?, out.features))
    }
}
