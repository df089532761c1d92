//! Real 3×3 convolution for the real-valued baseline network.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::init::init_real_uniform;
use crate::params::{join, Parameterized};
use crate::qnn::conv::KERNEL;
use crate::tensor::RealTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub filters: usize,
    /// `[P, C, 3, 3]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_channels: usize, filters: usize, seed: u64) -> Self {
        let fan_in = in_channels * KERNEL * KERNEL;
        Conv2d {
            in_channels,
            filters,
            weights: init_real_uniform(filters * fan_in, fan_in, seed),
            bias: vec![0.0; filters],
        }
    }

    fn dims(&self, input: &RealTensor) -> Result<(usize, usize, usize)> {
        let &[b, c, t, f] = input.shape() else {
            return Err(Error::shape(format!("convolution input must be [B, C, T, F], got {:?}", input.shape())));
        };
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        Ok((b, t, f))
    }

    #[inline]
    fn w(&self, p: usize, c: usize, kt: usize, kf: usize) -> f64 {
        self.weights[((p * self.in_channels + c) * KERNEL + kt) * KERNEL + kf]
    }

    pub fn forward(&self, input: &RealTensor) -> Result<RealTensor> {
        let (b, t, f) = self.dims(input)?;
        let (c, p, tf) = (self.in_channels, self.filters, t * f);
        let x = input.data();
        let items: Vec<Vec<f64>> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let mut out = vec![0.0; p * tf];
                for pi in 0..p {
                    let o = &mut out[pi * tf..(pi + 1) * tf];
                    o.fill(self.bias[pi]);
                    for ci in 0..c {
                        let xs = &x[(bi * c + ci) * tf..(bi * c + ci + 1) * tf];
                        for kt in 0..KERNEL {
                            for kf in 0..KERNEL {
                                let w = self.w(pi, ci, kt, kf);
                                for ti in 0..t {
                                    let Some(si) = (ti + kt).checked_sub(1).filter(|&s| s < t) else { continue };
                                    for fi in 0..f {
                                        let Some(sf) = (fi + kf).checked_sub(1).filter(|&s| s < f) else { continue };
                                        o[ti * f + fi] += w * xs[si * f + sf];
                                    }
                                }
                            }
                        }
                    }
                }
                out
            })
            .collect();
        RealTensor::from_vec(&[b, p, t, f], items.concat())
    }

    pub fn backward(&self, input: &RealTensor, grad_out: &RealTensor) -> Result<(RealTensor, Conv2d)> {
        let (b, t, f) = self.dims(input)?;
        let (c, p, tf) = (self.in_channels, self.filters, t * f);
        if grad_out.shape() != [b, p, t, f] {
            return Err(Error::shape("convolution output gradient has the wrong shape"));
        }
        let x = input.data();
        let g = grad_out.data();
        let per_item: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let mut gin = vec![0.0; c * tf];
                let mut gw = vec![0.0; self.weights.len()];
                let mut gb = vec![0.0; p];
                for pi in 0..p {
                    let gs = &g[(bi * p + pi) * tf..(bi * p + pi + 1) * tf];
                    gb[pi] += gs.iter().sum::<f64>();
                    for ci in 0..c {
                        let xs = &x[(bi * c + ci) * tf..(bi * c + ci + 1) * tf];
                        for kt in 0..KERNEL {
                            for kf in 0..KERNEL {
                                let widx = ((pi * c + ci) * KERNEL + kt) * KERNEL + kf;
                                let w = self.weights[widx];
                                let mut dw = 0.0;
                                for ti in 0..t {
                                    let Some(si) = (ti + kt).checked_sub(1).filter(|&s| s < t) else { continue };
                                    for fi in 0..f {
                                        let Some(sf) = (fi + kf).checked_sub(1).filter(|&s| s < f) else { continue };
                                        let gv = gs[ti * f + fi];
                                        dw += gv * xs[si * f + sf];
                                        gin[ci * tf + si * f + sf] += gv * w;
                                    }
                                }
                                gw[widx] += dw;
                            }
                        }
                    }
                }
                (gin, gw, gb)
            })
            .collect();
        let mut grads = Conv2d {
            in_channels: c,
            filters: p,
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; p],
        };
        let mut gin_all = Vec::with_capacity(b * c * tf);
        for (gin, gw, gb) in per_item {
            gin_all.extend(gin);
            grads.weights.iter_mut().zip(gw).for_each(|(a, v)| *a += v);
            grads.bias.iter_mut().zip(gb).for_each(|(a, v)| *a += v);
        }
        Ok((RealTensor::from_vec(input.shape(), gin_all)?, grads))
    }
}

impl Parameterized for Conv2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "weights"), &[self.filters, self.in_channels, KERNEL, KERNEL], &self.weights);
        f(&join(prefix, "bias"), &[self.filters], &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "weights"), &mut self.weights);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
