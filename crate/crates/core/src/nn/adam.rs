use serde::{Deserialize, Serialize};

use super::params::Params;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over one parameter group.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn update<P: Params>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gs = grads.tensors();
        for (k, g) in gs.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient tensor {k} has NaN/Inf")));
            }
        }
        if self.m.is_empty() {
            self.m = gs.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != gs.len() {
            return Err(Error::shape("optimizer state does not match parameter group"));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        let mut shape_ok = true;
        params.visit_mut("", &mut |_, p| {
            let g = gs[idx];
            if p.shape() != g.shape() {
                shape_ok = false;
                return;
            }
            let (mk, vk) = (m[idx].data_mut(), v[idx].data_mut());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                mk[j] = beta1 * mk[j] + (1.0 - beta1) * gj;
                vk[j] = beta2 * vk[j] + (1.0 - beta2) * gj * gj;
                let mhat = mk[j] / bc1;
                let vhat = vk[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
            idx += 1;
        });
        if !shape_ok {
            return Err(Error::shape("gradient shape differs from parameter shape"));
        }
        Ok(())
    }
}
