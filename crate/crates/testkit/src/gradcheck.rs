//! Central finite differences against autograd, one coordinate at a time.

use candle_core::{Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, for coordinates whose gradient is
/// ~0. Scaled by `max(1, |loss|)` since difference round-off grows with it.
pub const GRAD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates skipped because the two one-sided differences disagree,
    /// i.e. the step straddles a ReLU or |·| kink.
    pub kinks: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < TOLERANCE && self.kinks * 5 <= self.checked
    }

    pub fn summary(&self) -> String {
        format!(
            "{} coords, max rel err {:.2e} ({}), {} kinks skipped",
            self.checked, self.max_rel_err, self.worst, self.kinks
        )
    }
}

fn value(loss: &dyn Fn() -> Result<Tensor>) -> Result<f64> {
    loss()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()
}

fn set_coord(var: &Var, base: &[f64], i: usize, v: f64) -> Result<()> {
    let mut data = base.to_vec();
    data[i] = v;
    var.set(&Tensor::from_vec(data, var.shape(), var.device())?.to_dtype(var.dtype())?)
}

/// Checks up to `per_var` random coordinates of every variable. The loss must
/// be a scalar computed in double precision from the current variable values.
pub fn check(vars: &[(String, Var)], loss: &dyn Fn() -> Result<Tensor>, per_var: usize, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l0_t = loss()?;
    let grads = l0_t.backward()?;
    let l0 = l0_t.to_scalar::<f64>()?;
    let floor = GRAD_FLOOR * l0.abs().max(1.0);
    let mut report = GradReport::default();
    for (name, var) in vars {
        let base: Vec<f64> = var.as_tensor().flatten_all()?.to_vec1()?;
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1()?,
            None => vec![0.0; base.len()],
        };
        let n = base.len();
        let coords: Vec<usize> = if n <= per_var {
            (0..n).collect()
        } else {
            (0..per_var).map(|_| rng.random_range(0..n)).collect()
        };
        for i in coords {
            set_coord(var, &base, i, base[i] + STEP)?;
            let plus = value(loss)?;
            set_coord(var, &base, i, base[i] - STEP)?;
            let minus = value(loss)?;
            set_coord(var, &base, i, base[i])?;
            let (fwd, bwd) = ((plus - l0) / STEP, (l0 - minus) / STEP);
            let scale = fwd.abs().max(bwd.abs()).max(floor);
            if (fwd - bwd).abs() > 1e-2 * scale {
                report.kinks += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * STEP);
            let ad = analytic[i];
            let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{name}[{i}]: fd {fd:.6e} vs autograd {ad:.6e}");
            }
        }
    }
    Ok(report)
}
