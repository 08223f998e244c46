//! External spatial attention.
//!
//! The query is a composite of the projected context image and the encoder
//! features: context where the downsampled mask is clear, features where it is
//! damaged. Two small learnable operators, independent of the sample, then
//! contract the query along the height axis (key operator) and along the
//! width axis (value operator). Cost is linear in the number of positions for
//! fixed hidden widths, unlike full self-attention which is quadratic.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, Linear, Scope};

/// Nonlinearity between the two linear layers of an external operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExternalActivation {
    #[default]
    Relu,
    /// Linear pass-through; only meant for oracle tests.
    Identity,
}

/// Optional normalization of the hidden activations of each external operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionNormalization {
    #[default]
    None,
    /// Softmax over query positions, then L1 over the hidden width.
    Double,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EspaConfig {
    pub channels: usize,
    /// Bottleneck height `h` (the key operator's input width).
    pub height: usize,
    /// Bottleneck width `w` (the value operator's input width).
    pub width: usize,
    pub key_hidden: usize,
    pub value_hidden: usize,
    #[serde(default)]
    pub activation: ExternalActivation,
    #[serde(default)]
    pub normalization: AttentionNormalization,
}

impl EspaConfig {
    /// Hidden widths default to `min(h, w)`.
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        let d = height.min(width);
        Self {
            channels,
            height,
            width,
            key_hidden: d,
            value_hidden: d,
            activation: ExternalActivation::Relu,
            normalization: AttentionNormalization::None,
        }
    }
}

/// A map `n → d → n` applied to the last axis: two linear layers with an
/// activation between them.
#[derive(Debug, Clone)]
pub struct ExternalOperator {
    first: Linear,
    second: Linear,
}

impl ExternalOperator {
    pub fn new(scope: &Scope, size: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            first: Linear::new(&scope.pp("fc1"), size, hidden, true)?,
            second: Linear::new(&scope.pp("fc2"), hidden, size, true)?,
        })
    }

    pub fn from_linears(first: Linear, second: Linear) -> Self {
        Self { first, second }
    }

    pub fn size(&self) -> usize {
        self.first.in_features()
    }

    pub fn hidden(&self) -> usize {
        self.first.out_features()
    }

    pub fn first(&self) -> &Linear {
        &self.first
    }

    pub fn second(&self) -> &Linear {
        &self.second
    }

    fn forward(
        &self,
        x: &Tensor,
        activation: ExternalActivation,
        normalization: AttentionNormalization,
    ) -> Result<Tensor> {
        let hidden = self.first.forward(x)?;
        let hidden = match activation {
            ExternalActivation::Relu => hidden.relu()?,
            ExternalActivation::Identity => hidden,
        };
        let hidden = match normalization {
            AttentionNormalization::None => hidden,
            AttentionNormalization::Double => {
                // x is B×c×rows×d here; rows are the query positions.
                let soft = softmax(&hidden, 2)?;
                let norm = (soft.sum_keepdim(D::Minus1)? + 1e-9)?;
                soft.broadcast_div(&norm)?
            }
        };
        self.second.forward(&hidden)
    }
}

fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(dim)?)?)
}

/// The learnable key (height axis) and value (width axis) operators, shared
/// across channels and samples.
#[derive(Debug, Clone)]
pub struct ExternalMatrices {
    key: ExternalOperator,
    value: ExternalOperator,
    activation: ExternalActivation,
    normalization: AttentionNormalization,
}

impl ExternalMatrices {
    pub fn new(scope: &Scope, cfg: &EspaConfig) -> Result<Self> {
        Ok(Self {
            key: ExternalOperator::new(&scope.pp("key"), cfg.height, cfg.key_hidden)?,
            value: ExternalOperator::new(&scope.pp("value"), cfg.width, cfg.value_hidden)?,
            activation: cfg.activation,
            normalization: cfg.normalization,
        })
    }

    pub fn from_operators(
        key: ExternalOperator,
        value: ExternalOperator,
        activation: ExternalActivation,
    ) -> Self {
        Self {
            key,
            value,
            activation,
            normalization: AttentionNormalization::None,
        }
    }

    pub fn key(&self) -> &ExternalOperator {
        &self.key
    }

    pub fn value(&self) -> &ExternalOperator {
        &self.value
    }

    pub fn activation(&self) -> ExternalActivation {
        self.activation
    }

    /// `(Qᵀ·K̃)ᵀ·Ṽ` per channel for a `B×c×h×w` query.
    pub fn forward(&self, q: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = q.dims4()?;
        if h != self.key.size() || w != self.value.size() {
            return Err(Error::dim(format!(
                "external operators expect {}×{} queries, got {h}×{w}",
                self.key.size(),
                self.value.size()
            )));
        }
        // Rows of Qᵀ are the columns of Q: contract the height axis.
        let qt = q.transpose(2, 3)?.contiguous()?;
        let keyed = self.key.forward(&qt, self.activation, self.normalization)?;
        let keyed = keyed.transpose(2, 3)?.contiguous()?;
        self.value.forward(&keyed, self.activation, self.normalization)
    }
}

/// `I_sub ⊙ (1 − M_sub) + F_in ⊙ M_sub`, broadcasting the single-channel mask.
pub fn blend_query(i_sub: &Tensor, f_in: &Tensor, m_sub: &Tensor) -> Result<Tensor> {
    if i_sub.dims() != f_in.dims() {
        return Err(Error::dim(format!(
            "context projection {:?} does not match features {:?}",
            i_sub.dims(),
            f_in.dims()
        )));
    }
    let keep = m_sub.affine(-1.0, 1.0)?;
    Ok((i_sub.broadcast_mul(&keep)? + f_in.broadcast_mul(m_sub)?)?)
}

/// The complete ESPA branch: context projection, query compositing and the
/// external contraction.
#[derive(Debug, Clone)]
pub struct Espa {
    projection: Conv2d,
    matrices: ExternalMatrices,
    cfg: EspaConfig,
}

impl Espa {
    pub fn new(scope: &Scope, cfg: &EspaConfig) -> Result<Self> {
        Ok(Self {
            projection: Conv2d::new(&scope.pp("context_proj"), 3, cfg.channels, ConvSpec::same(1), true)?,
            matrices: ExternalMatrices::new(&scope.pp("external"), cfg)?,
            cfg: cfg.clone(),
        })
    }

    pub fn from_parts(projection: Conv2d, matrices: ExternalMatrices, cfg: EspaConfig) -> Self {
        Self {
            projection,
            matrices,
            cfg,
        }
    }

    pub fn config(&self) -> &EspaConfig {
        &self.cfg
    }

    pub fn matrices(&self) -> &ExternalMatrices {
        &self.matrices
    }

    /// Context average-pooled to bottleneck scale and projected to `c` channels.
    pub fn project_context(&self, context: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = context.dims4()?;
        if c != 3 {
            return Err(Error::dim(format!("context must have 3 channels, got {c}")));
        }
        let factor = self.downsample_factor(h, w)?;
        self.projection.forward(&context.avg_pool2d(factor)?)
    }

    /// Block-max downsampling of a `B×1×H×W` damage mask.
    pub fn downsample_mask(&self, mask: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = mask.dims4()?;
        let factor = self.downsample_factor(h, w)?;
        Ok(mask.max_pool2d(factor)?.detach())
    }

    pub fn composite_query(&self, f_in: &Tensor, context: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let i_sub = self.project_context(context)?;
        let m_sub = self.downsample_mask(mask)?;
        blend_query(&i_sub, f_in, &m_sub)
    }

    pub fn forward(&self, f_in: &Tensor, context: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = f_in.dims4()?;
        if (c, h, w) != (self.cfg.channels, self.cfg.height, self.cfg.width) {
            return Err(Error::dim(format!(
                "ESPA configured for {}×{}×{}, got features {c}×{h}×{w}",
                self.cfg.channels, self.cfg.height, self.cfg.width
            )));
        }
        let q = self.composite_query(f_in, context, mask)?;
        self.matrices.forward(&q)
    }

    fn downsample_factor(&self, h: usize, w: usize) -> Result<usize> {
        let (bh, bw) = (self.cfg.height, self.cfg.width);
        if !h.is_multiple_of(bh) || !w.is_multiple_of(bw) || h / bh != w / bw {
            return Err(Error::dim(format!(
                "{h}×{w} input does not reduce to the {bh}×{bw} bottleneck"
            )));
        }
        Ok(h / bh)
    }
}

/// Full softmax self-attention over all `h·w` positions of a `B×c×h×w` map,
/// used as the quadratic-cost reference.
pub fn full_self_attention(q: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = q.dims4()?;
    let tokens = q.reshape((b, c, h * w))?;
    let scores = (tokens.transpose(1, 2)?.contiguous()?.matmul(&tokens)? / (c as f64).sqrt())?;
    let attn = softmax(&scores, 2)?;
    let out = tokens.matmul(&attn.transpose(1, 2)?.contiguous()?)?;
    Ok(out.reshape((b, c, h, w))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Espa,
    FullSelfAttention,
}

/// Analytic multiply–accumulate count of the attention contraction.
///
/// ESPA: each of the `c·w` columns passes through `h→d_k→h` and each of the
/// `c·h` rows through `w→d_v→w`. Self-attention: `QᵀQ` plus the weighted sum,
/// `2·c·(h·w)²`.
pub fn attention_macs(h: u64, w: u64, c: u64, d_k: u64, d_v: u64, kind: AttentionKind) -> u64 {
    match kind {
        AttentionKind::Espa => c * w * 2 * h * d_k + c * h * 2 * w * d_v,
        AttentionKind::FullSelfAttention => 2 * c * (h * w) * (h * w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    use crate::nn::VarStore;

    #[test]
    fn mac_counts_scale_with_polynomial_degree() {
        let e1 = attention_macs(16, 16, 8, 4, 4, AttentionKind::Espa);
        let e2 = attention_macs(32, 32, 8, 4, 4, AttentionKind::Espa);
        let s1 = attention_macs(16, 16, 8, 4, 4, AttentionKind::FullSelfAttention);
        let s2 = attention_macs(32, 32, 8, 4, 4, AttentionKind::FullSelfAttention);
        assert_eq!(e2, 4 * e1);
        assert_eq!(s2, 16 * s1);
        // Strict dominance holds exactly while d_k + d_v < h·w.
        let sa = attention_macs(64, 64, 256, 0, 0, AttentionKind::FullSelfAttention);
        for d in [1u64, 16, 64, 1024, 2047] {
            assert!(attention_macs(64, 64, 256, d, d, AttentionKind::Espa) < sa);
        }
        assert_eq!(attention_macs(64, 64, 256, 2048, 2048, AttentionKind::Espa), sa);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let vs = VarStore::new(DType::F64, 0);
        let cfg = EspaConfig::new(2, 4, 4);
        let m = ExternalMatrices::new(&vs.root(), &cfg).unwrap();
        let q = Tensor::zeros((1, 2, 4, 8), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(m.forward(&q), Err(Error::Dimension(_))));
    }

    #[test]
    fn output_shape_matches_input() {
        for &(h, w) in &[(4usize, 4usize), (8, 16), (16, 8)] {
            let vs = VarStore::new(DType::F32, 1);
            let cfg = EspaConfig::new(3, h, w);
            let espa = Espa::new(&vs.root(), &cfg).unwrap();
            let f = Tensor::ones((2, 3, h, w), DType::F32, &Device::Cpu).unwrap();
            let ctx = Tensor::ones((2, 3, 4 * h, 4 * w), DType::F32, &Device::Cpu).unwrap();
            let mask = Tensor::zeros((2, 1, 4 * h, 4 * w), DType::F32, &Device::Cpu).unwrap();
            assert_eq!(espa.forward(&f, &ctx, &mask).unwrap().dims(), &[2, 3, h, w]);
        }
    }

    #[test]
    fn double_normalization_runs_and_keeps_shape() {
        let vs = VarStore::new(DType::F64, 2);
        let mut cfg = EspaConfig::new(2, 4, 4);
        cfg.normalization = AttentionNormalization::Double;
        let m = ExternalMatrices::new(&vs.root(), &cfg).unwrap();
        let q = Tensor::randn(0f64, 1.0, (1, 2, 4, 4), &Device::Cpu).unwrap();
        let out = m.forward(&q).unwrap();
        assert_eq!(out.dims(), &[1, 2, 4, 4]);
    }
}
