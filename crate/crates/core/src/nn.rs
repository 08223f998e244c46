//! Parameter storage, seeded initialization and the few layer primitives the
//! networks are assembled from.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, Image, SemanticMask};

/// Variance floor used by every normalization layer.
pub const NORM_EPS: f64 = 1e-5;

/// Parameter initializers. All randomness comes from the owning store's seeded RNG.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Uniform(f64),
    Normal(f64),
    Const(f64),
}

struct Inner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

/// A named collection of trainable variables with deterministic initialization.
#[derive(Clone)]
pub struct VarStore {
    inner: Arc<Mutex<Inner>>,
    dtype: DType,
    device: Device,
}

impl VarStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope {
        Scope {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn scope(&self, name: &str) -> Scope {
        self.root().pp(name)
    }

    /// Variables sorted by name.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().expect("var store poisoned");
        inner.vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.named_vars().into_iter().map(|(_, v)| v).collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        let inner = self.inner.lock().expect("var store poisoned");
        inner.vars.get(name).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("var store poisoned").vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.vars().iter().map(|v| v.elem_count()).sum()
    }

    /// Overwrites every variable from `tensors`; keys are checked in sorted
    /// order so the first offending key is reported.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.named_vars() {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::MissingParameter(name.clone()))?;
            if t.dims() != var.dims() {
                return Err(Error::ShapeMismatch {
                    key: name,
                    found: t.dims().to_vec(),
                    expected: var.dims().to_vec(),
                });
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Copies values of variables that exist in both stores (same name and shape).
    pub fn copy_from(&self, other: &VarStore) -> Result<()> {
        for (name, var) in self.named_vars() {
            if let Some(src) = other.get(&name) {
                if src.dims() != var.dims() {
                    return Err(Error::ShapeMismatch {
                        key: name,
                        found: src.dims().to_vec(),
                        expected: var.dims().to_vec(),
                    });
                }
                var.set(&src.as_tensor().to_dtype(self.dtype)?)?;
            }
        }
        Ok(())
    }

    fn var(&self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut inner = self.inner.lock().expect("var store poisoned");
        if let Some(v) = inner.vars.get(&name) {
            if v.dims() != shape {
                return Err(Error::ShapeMismatch {
                    key: name,
                    found: v.dims().to_vec(),
                    expected: shape.to_vec(),
                });
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::FanIn(fan_in) => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| inner.rng.random_range(-b..=b)).collect()
            }
            Init::Uniform(b) => (0..n).map(|_| inner.rng.random_range(-b..=b)).collect(),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::Parameter(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut inner.rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(name, var);
        Ok(out)
    }
}

/// A path prefix inside a [`VarStore`].
#[derive(Clone)]
pub struct Scope {
    store: VarStore,
    prefix: String,
}

impl Scope {
    pub fn pp(&self, name: &str) -> Scope {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Scope {
            store: self.store.clone(),
            prefix,
        }
    }

    pub fn var(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.var(self.pp(name).prefix, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Stride-1 convolution that preserves spatial size.
    pub fn same(kernel: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            padding: kernel / 2,
            dilation: 1,
        }
    }

    pub fn dilated(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            padding: dilation * (kernel / 2),
            dilation,
        }
    }

    pub fn strided(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            dilation: 1,
        }
    }

    /// Output length along one axis; 0 when the kernel does not fit.
    pub fn output_size(&self, input: usize) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        if input + 2 * self.padding < span {
            return 0;
        }
        (input + 2 * self.padding - span) / self.stride + 1
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    spec: ConvSpec,
}

impl Conv2d {
    pub fn new(
        scope: &Scope,
        in_channels: usize,
        out_channels: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_channels * spec.kernel * spec.kernel;
        let weight = scope.var(
            "weight",
            &[out_channels, in_channels, spec.kernel, spec.kernel],
            Init::FanIn(fan_in),
        )?;
        let bias = if bias {
            Some(scope.var("bias", &[out_channels], Init::FanIn(fan_in))?)
        } else {
            None
        };
        Ok(Self { weight, bias, spec })
    }

    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>, spec: ConvSpec) -> Self {
        Self { weight, bias, spec }
    }

    pub fn spec(&self) -> ConvSpec {
        self.spec
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.spec;
        let y = x.conv2d(&self.weight, s.padding, s.stride, s.dilation, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dims()[0], 1, 1))?)?,
            None => y,
        })
    }
}

/// Fully connected layer acting on the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(scope: &Scope, in_features: usize, out_features: usize, bias: bool) -> Result<Self> {
        let weight = scope.var("weight", &[out_features, in_features], Init::FanIn(in_features))?;
        let bias = if bias {
            Some(scope.var("bias", &[out_features], Init::FanIn(in_features))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self { weight, bias }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let inner = *dims.last().ok_or_else(|| Error::dim("linear input is a scalar"))?;
        if inner != self.in_features() {
            return Err(Error::dim(format!(
                "linear layer expects {} input features, got {inner}",
                self.in_features()
            )));
        }
        let rows = x.elem_count() / inner;
        let y = x.reshape((rows, inner))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-empty") = self.out_features();
        Ok(y.reshape(out_dims)?)
    }
}

/// Per-sample, per-channel normalization over spatial positions (no affine).
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let out = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
    Ok(out.reshape((b, c, h, w))?)
}

/// Logistic squashing into `(0, 1)`, written via `tanh` so large inputs stay finite
/// in both directions.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? * 0.5)?.affine(1.0, 0.5)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

/// Nearest-neighbour enlargement by an integer factor. Built from a broadcast
/// because the backward pass of candle's `upsample_nearest2d` replaces, rather
/// than accumulates, the gradient of its input.
pub fn upsample_nearest(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (height, width) {
        return Ok(x.clone());
    }
    if h == 0 || w == 0 || !height.is_multiple_of(h) || !width.is_multiple_of(w) {
        return Err(Error::dim(format!("cannot upsample {h}×{w} to {height}×{width}")));
    }
    let (fy, fx) = (height / h, width / w);
    Ok(x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, fy, w, fx))?
        .reshape((b, c, height, width))?)
}

/// Nearest-neighbour reduction by an integer factor (top-left sample of each block).
pub fn subsample(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (height, width) {
        return Ok(x.clone());
    }
    if height == 0 || width == 0 || h % height != 0 || w % width != 0 {
        return Err(Error::dim(format!(
            "cannot subsample {h}×{w} to {height}×{width}"
        )));
    }
    let (fy, fx) = (h / height, w / width);
    Ok(x.reshape((b, c, height, fy, width, fx))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .reshape((b, c, height, width))?)
}

pub fn images_to_tensor(images: &[&Image], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::dim("empty image batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data: Vec<f32> = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::dim("image batch with mixed sizes"));
        }
        data.extend(img.data().iter());
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?.to_dtype(dtype)?)
}

pub fn image_to_tensor(image: &Image, dtype: DType, device: &Device) -> Result<Tensor> {
    images_to_tensor(&[image], dtype, device)
}

pub fn masks_to_tensor(masks: &[&BinaryMask], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = masks.first().ok_or_else(|| Error::dim("empty mask batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::dim("mask batch with mixed sizes"));
        }
        data.extend(m.to_f32());
    }
    Ok(Tensor::from_vec(data, (masks.len(), 1, h, w), device)?.to_dtype(dtype)?)
}

pub fn mask_to_tensor(mask: &BinaryMask, dtype: DType, device: &Device) -> Result<Tensor> {
    masks_to_tensor(&[mask], dtype, device)
}

pub fn one_hot_to_tensor(
    masks: &[&SemanticMask],
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let first = masks.first().ok_or_else(|| Error::dim("empty label batch"))?;
    let (k, h, w) = (first.num_classes(), first.height(), first.width());
    let mut data: Vec<f32> = Vec::with_capacity(masks.len() * k * h * w);
    for m in masks {
        if (m.num_classes(), m.height(), m.width()) != (k, h, w) {
            return Err(Error::dim("label batch with mixed shapes"));
        }
        data.extend(m.one_hot().iter());
    }
    Ok(Tensor::from_vec(data, (masks.len(), k, h, w), device)?.to_dtype(dtype)?)
}

/// Splits a `B×3×H×W` tensor into images, clamping rounding excursions into `[0, 1]`.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::dim(format!("expected 3 channels, got {c}")));
    }
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    flat.chunks(3 * h * w)
        .take(b)
        .map(|chunk| {
            let arr = ndarray::Array3::from_shape_vec((3, h, w), chunk.to_vec())
                .map_err(|e| Error::dim(e.to_string()))?;
            Image::from_clamped(arr)
        })
        .collect()
}

pub fn tensor_to_image(t: &Tensor) -> Result<Image> {
    tensor_to_images(t)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::dim("empty batch"))
}

/// Scalar value of a rank-0 (or single-element) tensor.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}
