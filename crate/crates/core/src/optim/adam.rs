use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{param_count, Parameterized};
use crate::precision::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept flat, in parameter visiting
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &impl Parameterized) -> Self {
        let n = param_count(params);
        AdamState { config, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One update. Gradients with NaN/Inf abort the step before anything is
    /// modified.
    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P, precision: Precision) -> Result<()> {
        let mut g = Vec::with_capacity(self.m.len());
        let mut bad: Option<(String, usize, f64)> = None;
        grads.visit_params("", &mut |name, _, d| {
            if bad.is_none() {
                if let Some(i) = d.iter().position(|v| !v.is_finite()) {
                    bad = Some((name.to_string(), i, d[i]));
                }
            }
            g.extend_from_slice(d);
        });
        if let Some((name, i, v)) = bad {
            return Err(Error::Numerical(format!("gradient {name}[{i}] is {v}; Adam step aborted")));
        }
        if g.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, gradient has {}",
                self.m.len(),
                g.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut off = 0;
        params.visit_params_mut("", &mut |_, p| {
            for x in p.iter_mut() {
                let gi = g[off];
                m[off] = beta1 * m[off] + (1.0 - beta1) * gi;
                v[off] = beta2 * v[off] + (1.0 - beta2) * gi * gi;
                let m_hat = m[off] / bc1;
                let v_hat = v[off] / bc2;
                *x = precision.round(*x - lr * m_hat / (v_hat.sqrt() + eps));
                off += 1;
            }
        });
        Ok(())
    }
}
