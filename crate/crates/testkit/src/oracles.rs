//! Brute-force reference implementations over plain `f64` arrays. Nothing
//! here calls into the tensor library except for conversion.

use candle_core::{Device, Tensor};
use nalgebra::DMatrix;
use ndarray::{Array2, Array4};

use inpaint_core::Image;

pub fn to_array(t: &Tensor) -> Array4<f64> {
    let (b, c, h, w) = t.dims4().expect("rank-4 tensor");
    let v: Vec<f64> = t
        .to_dtype(candle_core::DType::F64)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    Array4::from_shape_vec((b, c, h, w), v).unwrap()
}

pub fn to_tensor(a: &Array4<f64>) -> Tensor {
    let (b, c, h, w) = a.dim();
    Tensor::from_vec(a.iter().cloned().collect::<Vec<_>>(), (b, c, h, w), &Device::Cpu).unwrap()
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(candle_core::DType::F64)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap()
}

pub fn to_matrix(t: &Tensor) -> Array2<f64> {
    let (r, c) = t.dims2().expect("rank-2 tensor");
    Array2::from_shape_vec((r, c), to_vec(t)).unwrap()
}

/// `max |a − b| / max |b|`, with a tiny floor on the denominator.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-300);
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn scalar_rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(1e-300)
    }
}

/// Direct convolution with zero padding.
pub fn conv2d(
    x: &Array4<f64>,
    weight: &Array4<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    dilation: usize,
) -> Array4<f64> {
    let (b, cin, h, w) = x.dim();
    let (cout, cin2, kh, kw) = weight.dim();
    assert_eq!(cin, cin2);
    let oh = (h + 2 * pad - dilation * (kh - 1) - 1) / stride + 1;
    let ow = (w + 2 * pad - dilation * (kw - 1) - 1) / stride + 1;
    let mut out = Array4::zeros((b, cout, oh, ow));
    for n in 0..b {
        for o in 0..cout {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for i in 0..cin {
                        for ky in 0..kh {
                            let iy = (y * stride + ky * dilation) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (xx * stride + kx * dilation) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += weight[[o, i, ky, kx]] * x[[n, i, iy as usize, ix as usize]];
                            }
                        }
                    }
                    out[[n, o, y, xx]] = acc;
                }
            }
        }
    }
    out
}

pub fn relu(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Per-sample, per-channel standardization with biased variance.
pub fn instance_norm(x: &Array4<f64>, eps: f64) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    let n = (h * w) as f64;
    let mut out = x.clone();
    for s in 0..b {
        for ch in 0..c {
            let mut mean = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    mean += x[[s, ch, y, xx]];
                }
            }
            mean /= n;
            let mut var = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    var += (x[[s, ch, y, xx]] - mean).powi(2);
                }
            }
            var /= n;
            let sd = (var + eps).sqrt();
            for y in 0..h {
                for xx in 0..w {
                    out[[s, ch, y, xx]] = (x[[s, ch, y, xx]] - mean) / sd;
                }
            }
        }
    }
    out
}

fn pool(x: &Array4<f64>, f: usize, max: bool) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    let mut out = Array4::zeros((b, c, h / f, w / f));
    for ((s, ch, y, xx), v) in out.indexed_iter_mut() {
        let cells = (0..f).flat_map(|i| (0..f).map(move |j| (i, j)));
        let vals: Vec<f64> = cells.map(|(i, j)| x[[s, ch, y * f + i, xx * f + j]]).collect();
        *v = if max {
            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        };
    }
    out
}

pub fn avg_pool(x: &Array4<f64>, f: usize) -> Array4<f64> {
    pool(x, f, false)
}

pub fn max_pool(x: &Array4<f64>, f: usize) -> Array4<f64> {
    pool(x, f, true)
}

/// Elementwise blend with a single-channel mask broadcast over channels.
pub fn blend(i_sub: &Array4<f64>, f_in: &Array4<f64>, m_sub: &Array4<f64>) -> Array4<f64> {
    let mut out = f_in.clone();
    for ((s, c, y, x), v) in out.indexed_iter_mut() {
        let m = m_sub[[s, 0, y, x]];
        *v = if m == 1.0 {
            f_in[[s, c, y, x]]
        } else if m == 0.0 {
            i_sub[[s, c, y, x]]
        } else {
            i_sub[[s, c, y, x]] * (1.0 - m) + f_in[[s, c, y, x]] * m
        };
    }
    out
}

/// Context pooled to feature scale, projected by a 1×1 convolution, and
/// blended with `f_in` under the block-max downsampled mask.
pub fn composite_query(
    f_in: &Array4<f64>,
    context: &Array4<f64>,
    mask: &Array4<f64>,
    proj_w: &Array4<f64>,
    proj_b: &[f64],
) -> Array4<f64> {
    let factor = context.dim().2 / f_in.dim().2;
    let i_sub = conv2d(&avg_pool(context, factor), proj_w, Some(proj_b), 1, 0, 1);
    let m_sub = max_pool(mask, factor);
    blend(&i_sub, f_in, &m_sub)
}

/// One two-layer operator `n → d → n` on the rows of `x` (r×n), as dense matrix products.
pub struct DenseOperator {
    pub w1: Array2<f64>,
    pub b1: Vec<f64>,
    pub w2: Array2<f64>,
    pub b2: Vec<f64>,
}

fn mat(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

impl DenseOperator {
    fn apply(&self, x: &DMatrix<f64>, relu: bool) -> DMatrix<f64> {
        let r = x.nrows();
        let ones = DMatrix::from_element(r, 1, 1.0);
        let b1 = DMatrix::from_row_slice(1, self.b1.len(), &self.b1);
        let b2 = DMatrix::from_row_slice(1, self.b2.len(), &self.b2);
        let mut hidden = x * mat(&self.w1).transpose() + &ones * b1;
        if relu {
            hidden.apply(|v| *v = v.max(0.0));
        }
        hidden * mat(&self.w2).transpose() + &ones * b2
    }
}

/// Per channel: contract the height axis with `key` (applied to the columns
/// of Q) and then the width axis with `value` (applied to the rows).
pub fn external_attention(q: &Array4<f64>, key: &DenseOperator, value: &DenseOperator, relu: bool) -> Array4<f64> {
    let (b, c, h, w) = q.dim();
    let mut out = Array4::zeros((b, c, h, w));
    for s in 0..b {
        for ch in 0..c {
            let qm = DMatrix::from_fn(h, w, |i, j| q[[s, ch, i, j]]);
            let keyed = key.apply(&qm.transpose(), relu).transpose();
            let valued = value.apply(&keyed, relu);
            for i in 0..h {
                for j in 0..w {
                    out[[s, ch, i, j]] = valued[(i, j)];
                }
            }
        }
    }
    out
}

/// Top-left sample of each `f×f` block.
pub fn subsample(x: &Array4<f64>, f: usize) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    Array4::from_shape_fn((b, c, h / f, w / f), |(s, ch, y, xx)| x[[s, ch, y * f, xx * f]])
}

pub struct ConvParams {
    pub weight: Array4<f64>,
    pub bias: Vec<f64>,
}

/// Instance normalization modulated by per-pixel scale and shift predicted
/// from the semantic map by a ReLU head and two 3×3 convolutions.
pub fn spade(
    x: &Array4<f64>,
    segmap: &Array4<f64>,
    shared: &ConvParams,
    gamma: &ConvParams,
    beta: &ConvParams,
    eps: f64,
) -> Array4<f64> {
    let seg = subsample(segmap, segmap.dim().2 / x.dim().2);
    let actv = relu(&conv2d(&seg, &shared.weight, Some(&shared.bias), 1, 1, 1));
    let g = conv2d(&actv, &gamma.weight, Some(&gamma.bias), 1, 1, 1);
    let bt = conv2d(&actv, &beta.weight, Some(&beta.bias), 1, 1, 1);
    let xn = instance_norm(x, eps);
    let mut out = xn.clone();
    for (idx, v) in out.indexed_iter_mut() {
        *v = xn[idx] * g[idx] + bt[idx];
    }
    out
}

pub fn l1(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean absolute error over damaged pixels (all channels); zero for an empty mask.
pub fn masked_l1(a: &Array4<f64>, b: &Array4<f64>, mask: &Array4<f64>) -> f64 {
    let (mut sum, mut count) = (0.0, 0.0);
    for ((s, c, y, x), v) in a.indexed_iter() {
        let m = mask[[s, 0, y, x]];
        sum += m * (v - b[[s, c, y, x]]).abs();
        count += m;
    }
    if count == 0.0 {
        0.0
    } else {
        sum / count
    }
}

pub fn mean_sq(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

pub fn lsgan_generator(d_fake: &Array4<f64>) -> f64 {
    d_fake.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / d_fake.len() as f64
}

pub fn lsgan_discriminator(d_real: &Array4<f64>, d_fake: &Array4<f64>) -> f64 {
    lsgan_generator(d_real) + d_fake.iter().map(|v| v * v).sum::<f64>() / d_fake.len() as f64
}

/// Stage outputs of a ReLU 3×3 pyramid with 2× average pooling between stages.
pub fn pyramid(x: &Array4<f64>, stages: &[ConvParams]) -> Vec<Array4<f64>> {
    let mut h = x.clone();
    let mut out = Vec::new();
    for (j, st) in stages.iter().enumerate() {
        if j > 0 {
            h = avg_pool(&h, 2);
        }
        h = relu(&conv2d(&h, &st.weight, Some(&st.bias), 1, 1, 1));
        out.push(h.clone());
    }
    out
}

pub fn perceptual(a: &Array4<f64>, b: &Array4<f64>, stages: &[ConvParams]) -> f64 {
    pyramid(a, stages)
        .iter()
        .zip(pyramid(b, stages).iter())
        .map(|(x, y)| mean_sq(x, y))
        .sum()
}

fn image_values(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&v| v as f64).collect()
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    let (x, y) = (image_values(a), image_values(b));
    let mse = x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        100.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(100.0)
    }
}

/// Mean SSIM over every fully contained 11×11 window, using a normalized 2-D
/// Gaussian (σ = 1.5) and centered second moments.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    let (h, w) = (a.height(), a.width());
    let n = 11;
    let sigma = 1.5f64;
    let mut kernel = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut windows = 0usize;
    for ch in 0..3 {
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let px = |img: &Image, i: usize, j: usize| img.data()[[ch, y0 + i, x0 + j]] as f64;
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let k = kernel[i][j] / total;
                        ma += k * px(a, i, j);
                        mb += k * px(b, i, j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let k = kernel[i][j] / total;
                        let (da, db) = (px(a, i, j) - ma, px(b, i, j) - mb);
                        va += k * da * da;
                        vb += k * db * db;
                        cov += k * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                windows += 1;
            }
        }
    }
    acc / windows as f64
}

fn sample_moments(f: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = f.len() as f64;
    let d = f[0].len();
    let mean: Vec<f64> = (0..d).map(|j| f.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let cov = DMatrix::from_fn(d, d, |i, j| {
        f.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / (n - 1.0)
    });
    (mean, cov)
}

/// Fréchet distance with the cross term from the eigenvalues of `Σ_a·Σ_b`
/// (real and non-negative for PSD factors).
pub fn frechet(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (ma, ca) = sample_moments(a);
    let (mb, cb) = sample_moments(b);
    let diff: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
    let cross: f64 = (&ca * &cb)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re.max(0.0).sqrt())
        .sum();
    diff + ca.trace() + cb.trace() - 2.0 * cross
}

/// Sample mean and standard deviation (n − 1 denominator).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// One-dimensional closed form `(μ_a − μ_b)² + (σ_a − σ_b)²`.
pub fn frechet_1d(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    (ma - mb).powi(2) + (sa - sb).powi(2)
}

/// Closed form for diagonal covariances: `Σ_j (μ_aj − μ_bj)² + (s_aj − s_bj)²`.
pub fn frechet_diagonal(mean_a: &[f64], sd_a: &[f64], mean_b: &[f64], sd_b: &[f64]) -> f64 {
    (0..mean_a.len())
        .map(|j| (mean_a[j] - mean_b[j]).powi(2) + (sd_a[j] - sd_b[j]).powi(2))
        .sum()
}
