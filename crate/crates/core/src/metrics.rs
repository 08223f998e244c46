//! Image-quality metrics: PSNR, SSIM and the Fréchet distance between
//! Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, Image};

/// PSNR reported for a zero mean-squared error.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Ridge added to a rank-deficient covariance.
pub const FRECHET_EPS: f64 = 1e-6;

fn check_same(pred: &Image, target: &Image) -> Result<()> {
    if (pred.height(), pred.width()) != (target.height(), target.width()) {
        return Err(Error::dim(format!(
            "metric inputs differ in size: {}×{} vs {}×{}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    Ok(())
}

pub fn mse(pred: &Image, target: &Image) -> Result<f64> {
    check_same(pred, target)?;
    let n = pred.data().len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// `10·log10(1/MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &Image, target: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, target)?))
}

/// PSNR over the damaged pixels only.
pub fn masked_psnr(pred: &Image, target: &Image, mask: &BinaryMask) -> Result<f64> {
    check_same(pred, target)?;
    if (mask.height(), mask.width()) != (pred.height(), pred.width()) {
        return Err(Error::dim("mask size does not match images"));
    }
    let (mut sum, mut count) = (0.0f64, 0usize);
    for ((y, x), _) in mask.data().indexed_iter().filter(|(_, &m)| m == 1) {
        let (a, b) = (pred.pixel(y, x), target.pixel(y, x));
        for c in 0..3 {
            sum += (a[c] as f64 - b[c] as f64).powi(2);
        }
        count += 3;
    }
    if count == 0 {
        return Err(Error::Data("mask has no damaged pixels".into()));
    }
    Ok(psnr_from_mse(sum / count as f64))
}

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over 11×11 Gaussian windows (σ = 1.5), dynamic
/// range 1, averaged over the three channels.
pub fn ssim(pred: &Image, target: &Image) -> Result<f64> {
    check_same(pred, target)?;
    let (h, w) = (pred.height(), pred.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} images, got {h}×{w}"
        )));
    }
    let k = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ch in 0..3 {
        let a: Vec<f64> = pred.data().index_axis(ndarray::Axis(0), ch).iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = target.data().index_axis(ndarray::Axis(0), ch).iter().map(|&v| v as f64).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let (mu_a, mu_b) = (filter_valid(&a, h, w, &k), filter_valid(&b, h, w, &k));
        let (e_aa, e_bb, e_ab) = (
            filter_valid(&aa, h, w, &k),
            filter_valid(&bb, h, w, &k),
            filter_valid(&ab, h, w, &k),
        );
        let n = mu_a.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

fn moments(feats: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = feats.len();
    if n < 2 {
        return Err(Error::dim("Fréchet distance needs at least 2 vectors per set"));
    }
    let d = feats[0].len();
    if d == 0 || feats.iter().any(|f| f.len() != d) {
        return Err(Error::dim("feature vectors have inconsistent dimensionality"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| feats[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centered = x;
    for j in 0..d {
        let m = mean[j];
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

/// Symmetric PSD square root by eigendecomposition; negative eigenvalues
/// (round-off) are clamped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

fn regularize(cov: DMatrix<f64>) -> DMatrix<f64> {
    let min_eig = SymmetricEigen::new(cov.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < FRECHET_EPS {
        let d = cov.nrows();
        cov + DMatrix::identity(d, d) * FRECHET_EPS
    } else {
        cov
    }
}

/// `‖μ_a−μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_aΣ_b)^{1/2})` between Gaussian fits of two
/// feature sets. The cross term uses `tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})`.
pub fn frechet_distance(feats_a: &[Vec<f64>], feats_b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = moments(feats_a)?;
    let (mu_b, cov_b) = moments(feats_b)?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::dim(format!(
            "feature dimensionality differs: {} vs {}",
            mu_a.len(),
            mu_b.len()
        )));
    }
    let cov_a = regularize(cov_a);
    let cov_b = regularize(cov_b);
    let root_a = sqrt_psd(&cov_a);
    let cross = sqrt_psd(&(&root_a * &cov_b * &root_a)).trace();
    let diff = (&mu_a - &mu_b).norm_squared();
    Ok((diff + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_closed_forms() {
        let a = Image::filled(4, 4, 0.25).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = Image::filled(4, 4, 0.75).unwrap();
        let expect = 10.0 * (1.0f64 / 0.25).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Image::from_fn(16, 16, |_, _, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = Image::new(a.data().mapv(|v| 1.0 - v)).unwrap();
        assert!(ssim(&a, &inv).unwrap() < -0.5);
        let small = Image::filled(8, 8, 0.0).unwrap();
        assert!(matches!(ssim(&small, &small), Err(Error::Dimension(_))));
    }

    #[test]
    fn frechet_identical_sets_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
        assert!(frechet_distance(&a, &a).unwrap() < 1e-6);
    }

    #[test]
    fn frechet_rejects_bad_inputs() {
        let a = vec![vec![1.0, 2.0]];
        assert!(frechet_distance(&a, &a).is_err());
        let b = vec![vec![1.0, 2.0], vec![0.0, 1.0]];
        let c = vec![vec![1.0], vec![0.0]];
        assert!(matches!(frechet_distance(&b, &c), Err(Error::Dimension(_))));
    }
}
