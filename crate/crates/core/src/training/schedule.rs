use crate::error::{Error, Result};

/// Constant learning rate up to `plateau`, then linear decay to zero at `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub plateau: u64,
    pub total: u64,
}

impl LrSchedule {
    pub fn new(base: f64, plateau: u64, total: u64) -> Result<Self> {
        if plateau > total {
            return Err(Error::Config(format!(
                "plateau_iters {plateau} exceeds total_iters {total}"
            )));
        }
        if !(base.is_finite() && base >= 0.0) {
            return Err(Error::Config(format!("invalid base learning rate {base}")));
        }
        Ok(Self {
            base,
            plateau,
            total,
        })
    }

    pub fn lr_at(&self, iteration: u64) -> Result<f64> {
        if iteration > self.total {
            return Err(Error::Parameter(format!(
                "iteration {iteration} is past total_iters {}",
                self.total
            )));
        }
        if iteration <= self.plateau {
            return Ok(self.base);
        }
        let remaining = (self.total - iteration) as f64;
        Ok(self.base * remaining / (self.total - self.plateau) as f64)
    }
}
