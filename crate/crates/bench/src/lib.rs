//! Inputs shared by the criterion benches.

use candle_core::{DType, Device, Tensor};
use inpaint_core::espa::{Espa, EspaConfig};
use inpaint_core::maskgen::center_mask;
use inpaint_core::nn::VarStore;
use inpaint_core::{synthetic, BinaryMask, Image, InpaintModel, ModelConfig, SemanticMask};

/// An ESPA block over an `side×side` bottleneck with matching inputs.
pub struct EspaFixture {
    _store: VarStore,
    pub espa: Espa,
    pub features: Tensor,
    pub context: Tensor,
    pub mask: Tensor,
}

impl EspaFixture {
    pub fn new(side: usize, channels: usize, hidden: usize) -> inpaint_core::Result<Self> {
        let store = VarStore::new(DType::F32, 1);
        let mut cfg = EspaConfig::new(channels, side, side);
        cfg.key_hidden = hidden;
        cfg.value_hidden = hidden;
        let espa = Espa::new(&store.root(), &cfg)?;
        let dev = Device::Cpu;
        let features = Tensor::rand(-1f32, 1.0, (1, channels, side, side), &dev)?;
        let context = Tensor::rand(0f32, 1.0, (1, 3, 4 * side, 4 * side), &dev)?;
        let mask = Tensor::rand(0f32, 1.0, (1, 1, 4 * side, 4 * side), &dev)?.ge(0.7)?.to_dtype(DType::F32)?;
        Ok(Self {
            _store: store,
            espa,
            features,
            context,
            mask,
        })
    }

    pub fn run(&self) -> inpaint_core::Result<Tensor> {
        self.espa.forward(&self.features, &self.context, &self.mask)
    }
}

/// Query map for the full self-attention reference.
pub fn attention_query(side: usize, channels: usize) -> candle_core::Result<Tensor> {
    Tensor::rand(-1f32, 1.0, (1, channels, side, side), &Device::Cpu)
}

/// An untrained desk-sized model with one synthetic scene and a centered hole.
pub struct PipelineFixture {
    pub model: InpaintModel,
    pub image: Image,
    pub labels: SemanticMask,
    pub mask: BinaryMask,
}

impl PipelineFixture {
    pub fn new(size: usize) -> inpaint_core::Result<Self> {
        let model = InpaintModel::new(ModelConfig::desk(size, size, synthetic::NUM_CLASSES), DType::F32, 3)?;
        let (image, labels) = synthetic::scene(size, size, 8)?;
        let mask = center_mask(size, size, size / 2)?;
        Ok(Self {
            model,
            image,
            labels,
            mask,
        })
    }
}
