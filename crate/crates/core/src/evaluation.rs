//! Metric tables over a labeled held-out set.

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, Image};
use crate::metrics::{frechet_distance, masked_psnr, psnr, ssim};
use crate::networks::Segmenter;
use crate::nn;
use crate::pipeline::InpaintModel;

/// Which output of the pipeline is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Composited stage-one result.
    Coarse,
    /// Stage two conditioned on the mask segmented from the composited coarse result.
    FinePredicted,
    /// Stage two conditioned on the ground-truth mask.
    FineGroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
    pub fid: f64,
    pub masked_psnr: f64,
}

/// Composited outputs of `setting` for every sample, each with its mask.
pub fn outputs(
    model: &InpaintModel,
    data: &Dataset,
    mask: &BinaryMask,
    setting: Setting,
    segmenter: &dyn Segmenter,
) -> Result<Vec<Image>> {
    data.samples
        .iter()
        .map(|s| {
            let c = model.coarse(&s.image, mask)?;
            match setting {
                Setting::Coarse => Ok(c.composited),
                Setting::FinePredicted => {
                    let labels = model.predict_semantic(&c.composited, segmenter)?;
                    Ok(model.refine(&c.features, &labels, &s.image, mask)?.1)
                }
                Setting::FineGroundTruth => {
                    let labels = s.labels.as_ref().ok_or_else(|| {
                        Error::Data(format!("sample {} has no ground-truth labels", s.name))
                    })?;
                    Ok(model.refine(&c.features, labels, &s.image, mask)?.1)
                }
            }
        })
        .collect()
}

fn embeddings(model: &InpaintModel, images: &[Image]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(16) {
        let refs: Vec<&Image> = chunk.iter().collect();
        let t = nn::images_to_tensor(&refs, model.dtype(), &Device::Cpu)?;
        out.extend(model.extractor.embeddings(&t)?);
    }
    Ok(out)
}

/// Mean PSNR, SSIM and masked PSNR over samples; Fréchet distance between
/// extractor embeddings of outputs and originals.
pub fn score(model: &InpaintModel, data: &Dataset, mask: &BinaryMask, results: &[Image]) -> Result<Scores> {
    if results.len() != data.len() || results.is_empty() {
        return Err(Error::Data("results do not match the dataset".into()));
    }
    let n = results.len() as f64;
    let (mut p, mut s, mut mp) = (0.0, 0.0, 0.0);
    for (r, sample) in results.iter().zip(&data.samples) {
        p += psnr(r, &sample.image)?;
        s += ssim(r, &sample.image)?;
        mp += masked_psnr(r, &sample.image, mask)?;
    }
    let originals: Vec<Image> = data.samples.iter().map(|s| s.image.clone()).collect();
    let fid = if results.len() >= 2 {
        frechet_distance(&embeddings(model, results)?, &embeddings(model, &originals)?)?
    } else {
        f64::NAN
    };
    Ok(Scores {
        psnr: p / n,
        ssim: s / n,
        fid,
        masked_psnr: mp / n,
    })
}

pub fn evaluate(
    model: &InpaintModel,
    data: &Dataset,
    mask: &BinaryMask,
    setting: Setting,
    segmenter: &dyn Segmenter,
) -> Result<Scores> {
    let results = outputs(model, data, mask, setting, segmenter)?;
    score(model, data, mask, &results)
}
