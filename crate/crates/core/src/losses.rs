//! Training objectives: L1 reconstruction, perceptual, least-squares
//! adversarial, and the weighted per-stage totals.
//!
//! Every function takes batched `B×C×H×W` tensors and returns a scalar
//! tensor; expectations are arithmetic means over batch and elements.

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub per: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            per: 1.0,
            adv: 0.01,
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!(
            "loss inputs differ in shape: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean absolute difference over all elements.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target)?;
    Ok((pred - target)?.abs()?.mean_all()?)
}

/// Mean absolute difference over damaged pixels only (`mask` is `B×1×H×W`).
/// Zero when nothing is damaged.
pub fn masked_l1_loss(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    same_shape(pred, target)?;
    let channels = pred.dims()[1] as f64;
    let count = mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()? * channels;
    let total = (pred - target)?.abs()?.broadcast_mul(mask)?.sum_all()?;
    Ok((total / count.max(1.0))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractorConfig {
    /// Width of each stage; every stage after the first halves the resolution.
    pub stage_channels: Vec<usize>,
    /// Seed of the frozen random weights.
    pub seed: u64,
}

impl Default for FeatureExtractorConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![64, 128, 256, 512, 512],
            seed: 0x5eed_f00d,
        }
    }
}

#[derive(Debug, Clone)]
struct FrozenConv {
    weight: Tensor,
    bias: Tensor,
}

impl FrozenConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.bias.dims()[0];
        Ok(x.conv2d(&self.weight, 1, 1, 1, 1)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?
            .relu()?)
    }
}

/// A frozen multi-stage convolutional pyramid `φ`; each stage's output is one
/// selected layer of the perceptual loss.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    /// `None` marks an identity stage (used only by tests).
    stages: Vec<Option<FrozenConv>>,
}

impl FeatureExtractor {
    /// Random-weight pyramid; He-normal weights from a fixed seed.
    pub fn random(cfg: &FeatureExtractorConfig, dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut cin = 3;
        let mut stages = Vec::new();
        for &cout in &cfg.stage_channels {
            let fan_in = cin * 9;
            let std = (2.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..cout * fan_in)
                .map(|_| {
                    // Box–Muller keeps this independent of distribution crate versions.
                    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.random();
                    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            stages.push(Some(FrozenConv {
                weight: Tensor::from_vec(w, (cout, cin, 3, 3), device)?.to_dtype(dtype)?,
                bias: Tensor::zeros(cout, dtype, device)?,
            }));
            cin = cout;
        }
        Ok(Self { stages })
    }

    /// Builds an extractor from externally supplied (e.g. pretrained) stage
    /// weights: `(weight K×C×3×3, bias K)` per stage.
    pub fn from_weights(weights: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let mut cin = 3;
        let mut stages = Vec::new();
        for (weight, bias) in weights {
            let (k, c, kh, kw) = weight.dims4()?;
            if c != cin || (kh, kw) != (3, 3) || bias.dims() != [k] {
                return Err(Error::dim(format!(
                    "feature stage weight {:?} does not follow a {cin}-channel input",
                    weight.dims()
                )));
            }
            stages.push(Some(FrozenConv { weight, bias }));
            cin = k;
        }
        Ok(Self { stages })
    }

    /// A single stage that returns its input unchanged.
    pub fn identity() -> Self {
        Self { stages: vec![None] }
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// `φ^j(x)` for every stage `j`.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for (j, stage) in self.stages.iter().enumerate() {
            if j > 0 {
                h = h.avg_pool2d(2)?;
            }
            if let Some(conv) = stage {
                h = conv.forward(&h)?;
            }
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Global-average-pooled stage features concatenated per sample (`B×ΣC_j`),
    /// used as Fréchet-distance embeddings.
    pub fn embeddings(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let feats = self.features(x)?;
        let pooled = feats
            .iter()
            .map(|f| Ok(f.mean((2, 3))?))
            .collect::<Result<Vec<_>>>()?;
        let cat = Tensor::cat(&pooled, 1)?.to_dtype(DType::F64)?;
        Ok(cat.to_vec2::<f64>()?)
    }
}

/// `Σ_j (1/(C_j·H_j·W_j)) ‖φ^j(target) − φ^j(pred)‖²`, averaged over the batch.
pub fn perceptual_loss(pred: &Tensor, target: &Tensor, fx: &FeatureExtractor) -> Result<Tensor> {
    same_shape(pred, target)?;
    let fp = fx.features(pred)?;
    let ft = fx.features(&target.detach())?;
    let mut total: Option<Tensor> = None;
    for (a, b) in fp.iter().zip(ft.iter()) {
        let term = (a - b)?.sqr()?.mean_all()?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Parameter("feature extractor has no stages".into()))
}

/// Generator side of the least-squares GAN: `mean((D(fake) − 1)²)`.
pub fn generator_adversarial(d_fake: &Tensor) -> Result<Tensor> {
    Ok((d_fake - 1.0)?.sqr()?.mean_all()?)
}

/// Discriminator side: `mean((D(real) − 1)²) + mean(D(fake)²)`.
pub fn discriminator_adversarial(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    Ok(((d_real - 1.0)?.sqr()?.mean_all()? + d_fake.sqr()?.mean_all()?)?)
}

/// `(g_loss, d_loss)` for one pair of score maps.
pub fn adversarial_losses(d_real: &Tensor, d_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((
        generator_adversarial(d_fake)?,
        discriminator_adversarial(d_real, d_fake)?,
    ))
}

/// `λ_rec·L_rec + λ_per·L_per`.
pub fn stage1_total(
    pred: &Tensor,
    target: &Tensor,
    fx: &FeatureExtractor,
    w: &LossWeights,
) -> Result<Tensor> {
    let rec = (l1_loss(pred, target)? * w.rec)?;
    if w.per == 0.0 {
        return Ok(rec);
    }
    Ok((rec + (perceptual_loss(pred, target, fx)? * w.per)?)?)
}

/// `λ_rec·L_rec + λ_per·L_per + λ_adv·L_adv` with `g_adv` the generator's
/// adversarial term.
pub fn stage2_total(
    pred: &Tensor,
    target: &Tensor,
    fx: &FeatureExtractor,
    g_adv: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    Ok((stage1_total(pred, target, fx, w)? + (g_adv * w.adv)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::scalar;

    fn t(v: Vec<f64>, shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn l1_trivial_cases() {
        let a = t(vec![0.3; 48], (1, 3, 4, 4));
        assert_eq!(scalar(&l1_loss(&a, &a).unwrap()).unwrap(), 0.0);
        let b = (&a + 0.1).unwrap();
        assert!((scalar(&l1_loss(&b, &a).unwrap()).unwrap() - 0.1).abs() < 1e-12);
        let c = t(vec![0.3; 32], (1, 2, 4, 4));
        assert!(matches!(l1_loss(&a, &c), Err(Error::Dimension(_))));
    }

    #[test]
    fn adversarial_trivial_cases() {
        let ones = t(vec![1.0; 4], (1, 1, 2, 2));
        let zeros = t(vec![0.0; 4], (1, 1, 2, 2));
        let (_, d) = adversarial_losses(&ones, &zeros).unwrap();
        assert_eq!(scalar(&d).unwrap(), 0.0);
        let (g, _) = adversarial_losses(&zeros, &ones).unwrap();
        assert_eq!(scalar(&g).unwrap(), 0.0);
    }

    #[test]
    fn stage2_adversarial_scaling() {
        let a = t(vec![0.5; 48], (1, 3, 4, 4));
        let fx = FeatureExtractor::identity();
        let g = Tensor::new(2.5f64, &Device::Cpu).unwrap();
        let w = LossWeights { rec: 0.0, per: 0.0, adv: 0.01 };
        let v = scalar(&stage2_total(&a, &a, &fx, &g, &w).unwrap()).unwrap();
        assert!((v - 0.025).abs() < 1e-12);
        let zero = Tensor::new(0.0f64, &Device::Cpu).unwrap();
        let v = scalar(&stage2_total(&a, &a, &fx, &zero, &LossWeights::default()).unwrap()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn masked_l1_ignores_context() {
        let a = t(vec![0.0; 48], (1, 3, 4, 4));
        let mut bv = vec![0.0; 48];
        bv[0] = 1.0; // channel 0, pixel (0, 0)
        bv[5] = 1.0; // channel 0, pixel (1, 1): outside the mask
        let b = t(bv, (1, 3, 4, 4));
        let mut mv = vec![0.0; 16];
        mv[0] = 1.0;
        let m = t(mv, (1, 1, 4, 4));
        let v = scalar(&masked_l1_loss(&a, &b, &m).unwrap()).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_extractor_is_deterministic() {
        let cfg = FeatureExtractorConfig { stage_channels: vec![4, 8], seed: 3 };
        let a = FeatureExtractor::random(&cfg, DType::F64, &Device::Cpu).unwrap();
        let b = FeatureExtractor::random(&cfg, DType::F64, &Device::Cpu).unwrap();
        let x = t((0..48).map(|i| i as f64 / 48.0).collect(), (1, 3, 4, 4));
        let fa = a.features(&x).unwrap();
        let fb = b.features(&x).unwrap();
        assert_eq!(fa.len(), 2);
        assert_eq!(fa[1].dims(), &[1, 8, 2, 2]);
        let va: Vec<f64> = fa[1].flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f64> = fb[1].flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(va, vb);
    }
}
