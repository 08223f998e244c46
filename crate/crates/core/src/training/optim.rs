use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, Tensor, Var};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::VarStore;

pub const ADAM_EPS: f64 = 1e-8;

/// Adam over the variables of one store. Moments are kept per variable name so
/// they can be checkpointed.
pub struct Adam {
    vars: Vec<(String, Var)>,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    beta1: f64,
    beta2: f64,
    step: u64,
}

impl Adam {
    pub fn new(store: &VarStore, beta1: f64, beta2: f64) -> Result<Self> {
        Self::over(store.named_vars(), beta1, beta2)
    }

    /// Optimizes several stores at once; names are prefixed with the group.
    pub fn over_groups(groups: &[(&str, &VarStore)], beta1: f64, beta2: f64) -> Result<Self> {
        let vars = groups
            .iter()
            .flat_map(|(g, s)| {
                s.named_vars()
                    .into_iter()
                    .map(move |(n, v)| (format!("{g}/{n}"), v))
            })
            .collect();
        Self::over(vars, beta1, beta2)
    }

    fn over(vars: Vec<(String, Var)>, beta1: f64, beta2: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!("Adam betas ({beta1}, {beta2}) must lie in [0, 1)")));
        }
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, var) in &vars {
            m.insert(name.clone(), var.as_tensor().zeros_like()?);
            v.insert(name.clone(), var.as_tensor().zeros_like()?);
        }
        Ok(Self {
            vars,
            m,
            v,
            beta1,
            beta2,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Variables without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, var) in &self.vars {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Detached so the moments do not chain autograd history across steps.
            let g = g.detach();
            let m = ((&self.m[name] * self.beta1)? + (&g * (1.0 - self.beta1))?)?.detach();
            let v = ((&self.v[name] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?.detach();
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + ADAM_EPS)?)?;
            var.set(&(var.as_tensor().detach() - (update * lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }

    pub fn save_into(&self, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
        for (name, t) in &self.m {
            ck.tensors.insert(format!("{prefix}/m/{name}"), t.clone());
        }
        for (name, t) in &self.v {
            ck.tensors.insert(format!("{prefix}/v/{name}"), t.clone());
        }
        ck.tensors.insert(
            format!("{prefix}/step"),
            Tensor::new(&[self.step as f64], &candle_core::Device::Cpu)?,
        );
        Ok(())
    }

    pub fn load_from(&mut self, ck: &Checkpoint, prefix: &str) -> Result<()> {
        let step = ck
            .tensors
            .get(&format!("{prefix}/step"))
            .ok_or_else(|| Error::MissingParameter(format!("{prefix}/step")))?;
        for (kind, map) in [("m", &mut self.m), ("v", &mut self.v)] {
            for (name, slot) in map.iter_mut() {
                let key = format!("{prefix}/{kind}/{name}");
                let t = ck
                    .tensors
                    .get(&key)
                    .ok_or_else(|| Error::MissingParameter(key.clone()))?;
                if t.dims() != slot.dims() {
                    return Err(Error::ShapeMismatch {
                        key,
                        found: t.dims().to_vec(),
                        expected: slot.dims().to_vec(),
                    });
                }
                *slot = t.to_dtype(slot.dtype())?;
            }
        }
        self.step = crate::nn::scalar(step)? as u64;
        Ok(())
    }
}
