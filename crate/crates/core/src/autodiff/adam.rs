use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::ParamSet;
use crate::math::sqrt;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per parameter of the set it
/// is stepped on and are allocated on first use.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every trainable tensor of `set` from its gradient, then zeroes
    /// the gradients. Frozen tensors are skipped and keep their moments.
    pub fn step(&mut self, set: &mut ParamSet) -> Result<()> {
        for (id, name, t) in set.iter() {
            if t.requires_grad() && !t.grad_populated() {
                return Err(Error::MissingGrad { param: name.to_string() });
            }
            if self.m.len() > id.0 && self.m[id.0].len() != t.len() {
                return Err(Error::shape(
                    "adam_step",
                    alloc::format!("moment buffer of {} has {} entries, parameter {}", name, self.m[id.0].len(), t.len()),
                ));
            }
        }
        while self.m.len() < set.len() {
            let n = set.get(super::ParamId(self.m.len())).len();
            self.m.push(vec![0.0; n]);
            self.v.push(vec![0.0; n]);
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - crate::math::powi(c.beta1, self.t as i32);
        let bc2 = 1.0 - crate::math::powi(c.beta2, self.t as i32);
        for (i, t) in set.tensors_mut().iter_mut().enumerate() {
            if !t.requires_grad() {
                continue;
            }
            let g: Vec<f32> = t.grad().map(|g| g.to_vec()).unwrap_or_default();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, p) in t.data_mut().iter_mut().enumerate() {
                let gk = g[k] as f64;
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *p = (*p as f64 - c.lr * mh / (sqrt(vh) + c.eps)) as f32;
            }
            t.zero_grad();
        }
        Ok(())
    }
}
