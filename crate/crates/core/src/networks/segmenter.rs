use std::collections::HashMap;

use candle_core::Tensor;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{Image, SemanticMask};
use crate::nn::{self, Conv2d, ConvSpec, Scope};

/// Tolerance on the per-pixel probability sum.
pub const SIMPLEX_TOLERANCE: f32 = 1e-4;

/// Anything that turns an image into per-pixel class probabilities
/// (`num_classes×H×W`, each pixel summing to one).
pub trait Segmenter: Send + Sync {
    fn num_classes(&self) -> usize;
    fn probabilities(&self, image: &Image) -> Result<Array3<f32>>;
}

pub fn validate_probabilities(probs: &Array3<f32>) -> Result<()> {
    let (k, h, w) = probs.dim();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0f32;
            for c in 0..k {
                let p = probs[[c, y, x]];
                if !(0.0..=1.0 + SIMPLEX_TOLERANCE).contains(&p) || !p.is_finite() {
                    return Err(Error::Contract(format!(
                        "probability {p} of class {c} at ({y}, {x}) is outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::Contract(format!(
                    "probabilities at ({y}, {x}) sum to {sum}"
                )));
            }
        }
    }
    Ok(())
}

/// Hard labels by per-pixel argmax; ties go to the lowest class id.
pub fn segment(image: &Image, segmenter: &dyn Segmenter) -> Result<SemanticMask> {
    let probs = segmenter.probabilities(image)?;
    let (k, h, w) = probs.dim();
    if k != segmenter.num_classes() || (h, w) != (image.height(), image.width()) {
        return Err(Error::Contract(format!(
            "segmenter returned {k}×{h}×{w} maps for a {}×{} image with {} classes",
            image.height(),
            image.width(),
            segmenter.num_classes()
        )));
    }
    validate_probabilities(&probs)?;
    SemanticMask::from_scores(&probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub base_channels: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self { base_channels: 32 }
    }
}

/// A small encoder–decoder with one skip connection.
#[derive(Debug, Clone)]
pub struct TinySegmenter {
    stem: Conv2d,
    down: Conv2d,
    mid: Conv2d,
    fuse: Conv2d,
    head: Conv2d,
    num_classes: usize,
}

impl TinySegmenter {
    pub fn new(scope: &Scope, cfg: &SegmenterConfig, num_classes: usize) -> Result<Self> {
        let b = cfg.base_channels;
        Ok(Self {
            stem: Conv2d::new(&scope.pp("stem"), 3, b, ConvSpec::same(3), true)?,
            down: Conv2d::new(&scope.pp("down"), b, 2 * b, ConvSpec::strided(4, 2, 1), true)?,
            mid: Conv2d::new(&scope.pp("mid"), 2 * b, 2 * b, ConvSpec::dilated(3, 2), true)?,
            fuse: Conv2d::new(&scope.pp("fuse"), 3 * b, b, ConvSpec::same(3), true)?,
            head: Conv2d::new(&scope.pp("head"), b, num_classes, ConvSpec::same(1), true)?,
            num_classes,
        })
    }

    /// Unnormalized class scores, `B×K×H×W`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let skip = self.stem.forward(x)?.relu()?;
        let y = self.down.forward(&skip)?.relu()?;
        let y = self.mid.forward(&y)?.relu()?;
        let y = nn::upsample_nearest(&y, h, w)?;
        let y = self.fuse.forward(&Tensor::cat(&[&skip, &y], 1)?)?.relu()?;
        self.head.forward(&y)
    }

    /// Mean per-pixel cross-entropy against one-hot targets `B×K×H×W`.
    pub fn cross_entropy(&self, x: &Tensor, one_hot: &Tensor) -> Result<Tensor> {
        let logits = self.logits(x)?;
        let max = logits.max_keepdim(1)?.detach();
        let shifted = logits.broadcast_sub(&max)?;
        let log_z = shifted.exp()?.sum_keepdim(1)?.log()?;
        let log_p = shifted.broadcast_sub(&log_z)?;
        let (b, _, h, w) = x.dims4()?;
        Ok(((log_p * one_hot)?.sum_all()? / -((b * h * w) as f64))?)
    }
}

impl Segmenter for TinySegmenter {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn probabilities(&self, image: &Image) -> Result<Array3<f32>> {
        let dtype = self.head.weight().dtype();
        let x = nn::image_to_tensor(image, dtype, self.head.weight().device())?;
        let logits = self.logits(&x)?;
        let max = logits.max_keepdim(1)?;
        let e = logits.broadcast_sub(&max)?.exp()?;
        let p = e.broadcast_div(&e.sum_keepdim(1)?)?;
        let flat: Vec<f32> = p.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1()?;
        Array3::from_shape_vec((self.num_classes, image.height(), image.width()), flat)
            .map_err(|e| Error::dim(e.to_string()))
    }
}

/// Serves precomputed label maps for datasets that ship ground-truth masks.
/// Images are matched by a fingerprint of their 8-bit pixel values.
#[derive(Debug, Clone, Default)]
pub struct FileSegmenter {
    labels: HashMap<[u8; 32], SemanticMask>,
    num_classes: usize,
}

impl FileSegmenter {
    pub fn new(num_classes: usize) -> Self {
        Self {
            labels: HashMap::new(),
            num_classes,
        }
    }

    pub fn fingerprint(image: &Image) -> [u8; 32] {
        let rgb = image.to_rgb8();
        let mut hasher = Sha256::new();
        hasher.update((image.height() as u32).to_le_bytes());
        hasher.update((image.width() as u32).to_le_bytes());
        hasher.update(rgb.as_raw());
        hasher.finalize().into()
    }

    pub fn insert(&mut self, image: &Image, labels: SemanticMask) -> Result<()> {
        if labels.num_classes() != self.num_classes {
            return Err(Error::Parameter(format!(
                "label map has {} classes, segmenter {}",
                labels.num_classes(),
                self.num_classes
            )));
        }
        self.labels.insert(Self::fingerprint(image), labels);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Segmenter for FileSegmenter {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn probabilities(&self, image: &Image) -> Result<Array3<f32>> {
        let labels = self
            .labels
            .get(&Self::fingerprint(image))
            .ok_or_else(|| Error::Data("no precomputed label map for this image".into()))?;
        Ok(labels.one_hot())
    }
}
