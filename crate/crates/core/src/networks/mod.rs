//! Generator, discriminator and segmenter networks.

mod autoencoder;
mod discriminator;
mod segmenter;
mod semantic;

use serde::{Deserialize, Serialize};

pub use autoencoder::{Autoencoder, AutoencoderConfig, CoarseOutput};
pub use discriminator::{DiscriminatorConfig, PatchDiscriminator};
pub use segmenter::{
    segment, validate_probabilities, FileSegmenter, Segmenter, SegmenterConfig, TinySegmenter,
};
pub use semantic::{SemanticDecoder, SemanticDecoderConfig, SpadeLayer, SpadeResBlock};

use crate::error::{Error, Result};
use crate::losses::FeatureExtractorConfig;

/// Everything needed to rebuild every network of the framework.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub autoencoder: AutoencoderConfig,
    pub decoder: SemanticDecoderConfig,
    pub discriminator: DiscriminatorConfig,
    pub segmenter: SegmenterConfig,
    pub perceptual: FeatureExtractorConfig,
}

impl ModelConfig {
    /// Full-size defaults: 256×256 input, 64 base channels, 256 bottleneck channels.
    pub fn full(num_classes: usize) -> Self {
        Self {
            height: 256,
            width: 256,
            num_classes,
            autoencoder: AutoencoderConfig::default(),
            decoder: SemanticDecoderConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            segmenter: SegmenterConfig::default(),
            perceptual: FeatureExtractorConfig::default(),
        }
    }

    /// Narrow networks for single-core desk runs.
    pub fn desk(height: usize, width: usize, num_classes: usize) -> Self {
        Self {
            height,
            width,
            num_classes,
            autoencoder: AutoencoderConfig {
                base_channels: 16,
                bottleneck_channels: 32,
                dilation_rates: vec![1, 2, 4],
                ..AutoencoderConfig::default()
            },
            decoder: SemanticDecoderConfig {
                block_channels: vec![32, 24, 16],
                spade_hidden: 16,
            },
            discriminator: DiscriminatorConfig {
                base_channels: 8,
                ..DiscriminatorConfig::default()
            },
            segmenter: SegmenterConfig { base_channels: 8 },
            perceptual: FeatureExtractorConfig {
                stage_channels: vec![8, 16, 16],
                seed: FeatureExtractorConfig::default().seed,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "image size {}×{} must be a positive multiple of 4",
                self.height, self.width
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.decoder.block_channels.len() < 2 {
            return Err(Error::Config("semantic decoder needs at least 2 blocks".into()));
        }
        if self
            .perceptual
            .stage_channels
            .len()
            .saturating_sub(1)
            > self.height.min(self.width).trailing_zeros() as usize
        {
            return Err(Error::Config(
                "perceptual extractor has more stages than the image can be halved".into(),
            ));
        }
        Ok(())
    }
}
