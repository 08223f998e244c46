//! The full model bundle and the two-step inference used by the service and CLI.

use candle_core::{DType, Device, Tensor};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::imaging::{apply_mask, composite, BinaryMask, Image, SemanticMask};
use crate::losses::FeatureExtractor;
use crate::networks::{
    segment, Autoencoder, ModelConfig, PatchDiscriminator, SemanticDecoder, Segmenter,
    TinySegmenter,
};
use crate::nn::{self, VarStore};

/// Checkpoint groups, one per independently optimized network.
pub const STAGE1: &str = "stage1";
pub const STAGE2: &str = "stage2";
pub const DISCRIMINATOR: &str = "disc";
pub const SEGMENTER: &str = "seg";

fn component_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index)
}

/// Every network of the framework with its own parameter store.
pub struct InpaintModel {
    pub config: ModelConfig,
    pub stage1: VarStore,
    pub stage2: VarStore,
    pub disc: VarStore,
    pub seg: VarStore,
    pub autoencoder: Autoencoder,
    pub decoder: SemanticDecoder,
    pub discriminator: PatchDiscriminator,
    pub segmenter: TinySegmenter,
    pub extractor: FeatureExtractor,
    trained_segmenter: bool,
}

/// Stage-one outputs for one image.
#[derive(Debug, Clone)]
pub struct CoarseResult {
    pub coarse: Image,
    /// Coarse hole pasted into the original context.
    pub composited: Image,
    /// `1×c×H/4×W/4` fused bottleneck features.
    pub features: Tensor,
}

impl InpaintModel {
    /// Freshly initialized networks.
    pub fn new(config: ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let stage1 = VarStore::new(dtype, component_seed(seed, 1));
        let stage2 = VarStore::new(dtype, component_seed(seed, 2));
        let disc = VarStore::new(dtype, component_seed(seed, 3));
        let seg = VarStore::new(dtype, component_seed(seed, 4));
        let (h, w) = (config.height, config.width);
        let autoencoder = Autoencoder::new(&stage1.root(), &config.autoencoder, h, w)?;
        let decoder = SemanticDecoder::new(
            &stage2.root(),
            &config.decoder,
            config.autoencoder.bottleneck_channels,
            config.num_classes,
        )?;
        let discriminator = PatchDiscriminator::new(&disc.root(), &config.discriminator)?;
        let segmenter = TinySegmenter::new(&seg.root(), &config.segmenter, config.num_classes)?;
        let extractor = FeatureExtractor::random(&config.perceptual, dtype, &Device::Cpu)?;
        Ok(Self {
            config,
            stage1,
            stage2,
            disc,
            seg,
            autoencoder,
            decoder,
            discriminator,
            segmenter,
            extractor,
            trained_segmenter: false,
        })
    }

    /// Rebuilds the networks described by the checkpoint and loads every group
    /// it contains. Both generator stages are required.
    pub fn from_checkpoint(ck: &Checkpoint, dtype: DType) -> Result<Self> {
        let mut model = Self::new(ck.model.clone(), dtype, 0)?;
        for group in [STAGE1, STAGE2] {
            if !ck.has_group(group) {
                return Err(Error::MissingParameter(format!("{group}/*")));
            }
        }
        model.restore(ck)?;
        Ok(model)
    }

    /// Loads whichever groups `ck` contains.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.model != self.config {
            // Shapes are checked per parameter below; a differing config is
            // reported through the first mismatching key.
            log::debug!("checkpoint model config differs from the running model");
        }
        for (group, store) in self.stores() {
            if ck.has_group(group) {
                ck.restore_store(group, store)?;
            }
        }
        if ck.has_group(SEGMENTER) {
            self.trained_segmenter = true;
        }
        Ok(())
    }

    pub fn stores(&self) -> [(&'static str, &VarStore); 4] {
        [
            (STAGE1, &self.stage1),
            (STAGE2, &self.stage2),
            (DISCRIMINATOR, &self.disc),
            (SEGMENTER, &self.seg),
        ]
    }

    /// Checkpoint with every parameter group. The segmenter group is written
    /// only once the segmenter has been trained or loaded.
    pub fn to_checkpoint(&self, iteration: u64, config: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(iteration, self.config.clone(), config);
        for (group, store) in self.stores() {
            if group != SEGMENTER || self.trained_segmenter {
                ck.insert_store(group, store);
            }
        }
        ck
    }

    pub fn dtype(&self) -> DType {
        self.stage1.dtype()
    }

    pub fn has_trained_segmenter(&self) -> bool {
        self.trained_segmenter
    }

    pub fn mark_segmenter_trained(&mut self) {
        self.trained_segmenter = true;
    }

    fn check_size(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.config.height, self.config.width) {
            return Err(Error::dim(format!(
                "model runs at {}×{}, got {h}×{w}",
                self.config.height, self.config.width
            )));
        }
        Ok(())
    }

    /// Stage one on an unmasked `image` and its damage mask.
    pub fn coarse(&self, image: &Image, mask: &BinaryMask) -> Result<CoarseResult> {
        self.check_size(image.height(), image.width())?;
        let image_in = apply_mask(image, mask)?;
        let (coarse, features) = self.autoencoder.coarse_inpaint(&image_in, mask)?;
        let composited = composite(&coarse, image, mask)?;
        Ok(CoarseResult {
            coarse,
            composited,
            features,
        })
    }

    /// Hard labels for `image` from `segmenter`.
    pub fn predict_semantic(&self, image: &Image, segmenter: &dyn Segmenter) -> Result<SemanticMask> {
        segment(image, segmenter)
    }

    /// Stage two from cached features; returns the raw decoder output and the
    /// result composited into `original`.
    pub fn refine(
        &self,
        features: &Tensor,
        semantic: &SemanticMask,
        original: &Image,
        mask: &BinaryMask,
    ) -> Result<(Image, Image)> {
        self.check_size(semantic.height(), semantic.width())?;
        if semantic.num_classes() != self.config.num_classes {
            return Err(Error::Parameter(format!(
                "semantic mask has {} classes, model {}",
                semantic.num_classes(),
                self.config.num_classes
            )));
        }
        let seg = nn::one_hot_to_tensor(&[semantic], self.dtype(), &Device::Cpu)?;
        let fine = nn::tensor_to_image(&self.decoder.forward(features, &seg)?)?;
        let composited = composite(&fine, original, mask)?;
        Ok((fine, composited))
    }
}
