//! Split batch normalization: every real plane of every quaternion channel is
//! standardized on its own over the batch, time and frequency axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{join, Parameterized};
use crate::quat::QuatTensor;
use crate::tensor::RealTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-6;

/// Batch norm over `[B, C, T, F]` real maps, one statistic per map `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: RealTensor,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
    /// Batch mean and unbiased variance per map (training mode only).
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl BatchNorm {
    pub fn new(maps: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; maps],
            beta: vec![0.0; maps],
            running_mean: vec![0.0; maps],
            running_var: vec![1.0; maps],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn maps(&self) -> usize {
        self.gamma.len()
    }

    fn dims(&self, input: &RealTensor) -> Result<(usize, usize, usize)> {
        let &[b, c, t, f] = input.shape() else {
            return Err(Error::shape(format!("batch norm input must be [B, C, T, F], got {:?}", input.shape())));
        };
        if c != self.maps() {
            return Err(Error::shape(format!("batch norm has {} maps, input has {c}", self.maps())));
        }
        Ok((b, c, t * f))
    }

    /// Normalizes `input`. In training mode the batch statistics are returned
    /// in the cache; fold them into the running averages with
    /// [`BatchNorm::update_running`].
    pub fn forward(&self, input: &RealTensor, mode: Mode) -> Result<(RealTensor, BatchNormCache)> {
        let (b, c, tf) = self.dims(input)?;
        if mode == Mode::Train && b < 2 {
            return Err(Error::Input(format!(
                "batch norm in training mode needs a batch of at least 2, got {b}"
            )));
        }
        let x = input.data();
        let n = (b * tf) as f64;
        let mut x_hat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let mut batch_mean = Vec::new();
        let mut batch_var = Vec::new();
        for ci in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut s = 0.0;
                    for bi in 0..b {
                        let o = (bi * c + ci) * tf;
                        s += x[o..o + tf].iter().sum::<f64>();
                    }
                    let mean = s / n;
                    let mut ss = 0.0;
                    for bi in 0..b {
                        let o = (bi * c + ci) * tf;
                        ss += x[o..o + tf].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                    }
                    let var = ss / n;
                    let unbiased = if n > 1.0 { ss / (n - 1.0) } else { var };
                    batch_mean.push(mean);
                    batch_var.push(unbiased);
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[ci], self.running_var[ci]),
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ci] = is;
            let (g, bt) = (self.gamma[ci], self.beta[ci]);
            for bi in 0..b {
                let o = (bi * c + ci) * tf;
                for i in o..o + tf {
                    let h = (x[i] - mean) * is;
                    x_hat[i] = h;
                    out[i] = g * h + bt;
                }
            }
        }
        let shape = input.shape();
        Ok((
            RealTensor::from_vec(shape, out)?,
            BatchNormCache {
                x_hat: RealTensor::from_vec(shape, x_hat)?,
                inv_std,
                mode,
                batch_stats: (mode == Mode::Train).then_some((batch_mean, batch_var)),
            },
        ))
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if let Some((mean, var)) = &cache.batch_stats {
            for ci in 0..self.maps() {
                self.running_mean[ci] = (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean[ci];
                self.running_var[ci] = (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var[ci];
            }
        }
    }

    pub fn backward(&self, cache: &BatchNormCache, grad_out: &RealTensor) -> Result<(RealTensor, BatchNorm)> {
        let (b, c, tf) = self.dims(grad_out)?;
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(Error::shape("batch norm gradient does not match the cached forward pass"));
        }
        let g = grad_out.data();
        let xh = cache.x_hat.data();
        let n = (b * tf) as f64;
        let mut gin = vec![0.0; g.len()];
        let mut grads = BatchNorm::new(c);
        grads.gamma.fill(0.0);
        for ci in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for bi in 0..b {
                let o = (bi * c + ci) * tf;
                for i in o..o + tf {
                    sum_g += g[i];
                    sum_gx += g[i] * xh[i];
                }
            }
            grads.beta[ci] = sum_g;
            grads.gamma[ci] = sum_gx;
            let scale = self.gamma[ci] * cache.inv_std[ci];
            for bi in 0..b {
                let o = (bi * c + ci) * tf;
                for i in o..o + tf {
                    gin[i] = match cache.mode {
                        Mode::Train => scale * (g[i] - sum_g / n - xh[i] * sum_gx / n),
                        Mode::Eval => scale * g[i],
                    };
                }
            }
        }
        Ok((RealTensor::from_vec(grad_out.shape(), gin)?, grads))
    }
}

impl Parameterized for BatchNorm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "gamma"), &[self.maps()], &self.gamma);
        f(&join(prefix, "beta"), &[self.maps()], &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "running_mean"), &[self.maps()], &self.running_mean);
        f(&join(prefix, "running_var"), &[self.maps()], &self.running_var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Split batch norm on quaternion maps: `C` quaternion channels are `4C`
/// independent real planes.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBatchNorm {
    pub inner: BatchNorm,
}

impl SplitBatchNorm {
    pub fn new(channels: usize) -> Self {
        SplitBatchNorm { inner: BatchNorm::new(4 * channels) }
    }

    pub fn forward(&self, input: &QuatTensor, mode: Mode) -> Result<(QuatTensor, BatchNormCache)> {
        let (out, cache) = self.inner.forward(&input.to_real_maps()?, mode)?;
        Ok((QuatTensor::from_real_maps(&out)?, cache))
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        self.inner.update_running(cache)
    }

    pub fn backward(&self, cache: &BatchNormCache, grad_out: &QuatTensor) -> Result<(QuatTensor, SplitBatchNorm)> {
        let (gin, grads) = self.inner.backward(cache, &grad_out.to_real_maps()?)?;
        Ok((QuatTensor::from_real_maps(&gin)?, SplitBatchNorm { inner: grads }))
    }
}

impl Parameterized for SplitBatchNorm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.inner.visit_params(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.inner.visit_params_mut(prefix, f)
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.inner.visit_buffers(prefix, f)
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.inner.visit_buffers_mut(prefix, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::Quaternion;

    #[test]
    fn constant_plane_normalizes_to_zero() {
        let bn = SplitBatchNorm::new(1);
        let x = QuatTensor::filled(&[4, 1, 2, 3], Quaternion::new(3.0, -2.0, 0.5, 7.0));
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for k in 0..4 {
            assert!(y.plane(k).iter().all(|&v| v == 0.0), "{:?}", y.plane(k));
        }
    }

    #[test]
    fn standardized_plane_unchanged() {
        let bn = BatchNorm::new(1);
        let data = vec![-1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0];
        let x = RealTensor::from_vec(&[2, 1, 2, 2], data.clone()).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean = vec![0.5, -3.0];
        bn.running_var = vec![2.0, 4.0];
        bn.beta = vec![0.25, -0.75];
        bn.gamma = vec![3.0, 2.0];
        let x = RealTensor::from_vec(&[1, 2, 1, 2], vec![0.5, 0.5, -3.0, -3.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[0.25, 0.25, -0.75, -0.75]);
    }

    #[test]
    fn batch_of_one_rejected_in_training() {
        let bn = BatchNorm::new(1);
        let x = RealTensor::zeros(&[1, 1, 4, 4]);
        assert!(bn.forward(&x, Mode::Train).is_err());
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_only_move_in_training() {
        let mut bn = BatchNorm::new(1);
        let x = RealTensor::from_vec(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, cache) = bn.forward(&x, Mode::Eval).unwrap();
        bn.update_running(&cache);
        assert_eq!(bn.running_mean, vec![0.0]);
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        bn.update_running(&cache);
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-15);
    }
}
