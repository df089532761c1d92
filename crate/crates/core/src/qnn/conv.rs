//! Quaternion 2-D convolution over `[B, C, T, F]` inputs, 3×3 kernels,
//! stride 1, zero "same" padding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::init::{init_quaternion_tensor, InitSpec};
use crate::params::{visit_quat, visit_quat_mut, Parameterized};
use crate::quat::{QuatTensor, Quaternion};

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct QConv2d {
    /// `[P_out, C_in, 3, 3]`
    pub kernels: QuatTensor,
    /// `[P_out]`
    pub bias: QuatTensor,
}

impl QConv2d {
    pub fn new(in_channels: usize, filters: usize, seed: u64) -> Result<Self> {
        if in_channels == 0 || filters == 0 {
            return Err(Error::config("convolution needs at least one input channel and one filter"));
        }
        let kernels = init_quaternion_tensor(
            &[filters, in_channels, KERNEL, KERNEL],
            InitSpec { fan_in: in_channels * KERNEL * KERNEL, seed },
        )?;
        Ok(QConv2d { kernels, bias: QuatTensor::zeros(&[filters]) })
    }

    pub fn from_parts(kernels: QuatTensor, bias: QuatTensor) -> Result<Self> {
        let &[p, _, kh, kw] = kernels.shape() else {
            return Err(Error::shape(format!("kernels must be [P, C, 3, 3], got {:?}", kernels.shape())));
        };
        if kh != KERNEL || kw != KERNEL {
            return Err(Error::shape(format!("kernel must be 3x3, got {kh}x{kw}")));
        }
        if bias.shape() != [p] {
            return Err(Error::shape(format!("bias must be [{p}], got {:?}", bias.shape())));
        }
        Ok(QConv2d { kernels, bias })
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    fn check_input(&self, input: &QuatTensor) -> Result<(usize, usize, usize, usize)> {
        let &[b, c, t, f] = input.shape() else {
            return Err(Error::shape(format!(
                "convolution input must be [B, C, T, F], got {:?}",
                input.shape()
            )));
        };
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got {c} (input shape {:?})",
                self.in_channels(),
                input.shape()
            )));
        }
        if t == 0 || f == 0 {
            return Err(Error::shape(format!("empty time/frequency extent: T={t}, F={f}")));
        }
        Ok((b, c, t, f))
    }

    pub fn forward(&self, input: &QuatTensor) -> Result<QuatTensor> {
        let (b, c, t, f) = self.check_input(input)?;
        let p = self.filters();
        let tf = t * f;
        let items: Vec<[Vec<f64>; 4]> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; p * tf]);
                for pi in 0..p {
                    let bias = self.bias.get(pi);
                    let o = pi * tf;
                    for (k, v) in bias.to_array().into_iter().enumerate() {
                        out[k][o..o + tf].fill(v);
                    }
                    for ci in 0..c {
                        let src = (bi * c + ci) * tf;
                        let x: [&[f64]; 4] = std::array::from_fn(|k| &input.plane(k)[src..src + tf]);
                        for kt in 0..KERNEL {
                            for kf in 0..KERNEL {
                                let w = self.kernels.get(((pi * c + ci) * KERNEL + kt) * KERNEL + kf);
                                accumulate_tap(&mut out, o, &x, w, t, f, kt, kf);
                            }
                        }
                    }
                }
                out
            })
            .collect();
        assemble(&[b, p, t, f], items)
    }

    /// Gradients with respect to the input and to every parameter.
    pub fn backward(&self, input: &QuatTensor, grad_out: &QuatTensor) -> Result<(QuatTensor, QConv2d)> {
        let (b, c, t, f) = self.check_input(input)?;
        let p = self.filters();
        if grad_out.shape() != [b, p, t, f] {
            return Err(Error::shape(format!(
                "output gradient has shape {:?}, expected {:?}",
                grad_out.shape(),
                [b, p, t, f]
            )));
        }
        let tf = t * f;
        let per_item: Vec<([Vec<f64>; 4], QuatTensor, QuatTensor)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let mut gin: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; c * tf]);
                let mut gk = QuatTensor::zeros(self.kernels.shape());
                let mut gb = QuatTensor::zeros(&[p]);
                for pi in 0..p {
                    let go = (bi * p + pi) * tf;
                    let g: [&[f64]; 4] = std::array::from_fn(|k| &grad_out.plane(k)[go..go + tf]);
                    let mut bsum = [0.0; 4];
                    for (k, s) in bsum.iter_mut().enumerate() {
                        *s = g[k].iter().sum();
                    }
                    gb.add_at(pi, Quaternion::from_array(bsum));
                    for ci in 0..c {
                        let src = (bi * c + ci) * tf;
                        let x: [&[f64]; 4] = std::array::from_fn(|k| &input.plane(k)[src..src + tf]);
                        for kt in 0..KERNEL {
                            for kf in 0..KERNEL {
                                let widx = ((pi * c + ci) * KERNEL + kt) * KERNEL + kf;
                                let w = self.kernels.get(widx);
                                let dw = tap_backward(&mut gin, ci * tf, &x, &g, w, t, f, kt, kf);
                                gk.add_at(widx, dw);
                            }
                        }
                    }
                }
                (gin, gk, gb)
            })
            .collect();

        let mut grad_kernels = QuatTensor::zeros(self.kernels.shape());
        let mut grad_bias = QuatTensor::zeros(&[p]);
        let mut gin_items = Vec::with_capacity(b);
        for (gin, gk, gb) in per_item {
            grad_kernels.add_assign(&gk)?;
            grad_bias.add_assign(&gb)?;
            gin_items.push(gin);
        }
        let grad_input = assemble(&[b, c, t, f], gin_items)?;
        Ok((grad_input, QConv2d { kernels: grad_kernels, bias: grad_bias }))
    }
}

/// Valid output range for a tap offset `k - 1` along an axis of length `n`.
#[inline]
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    // output index o reads input o + k - 1
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k + 1 > KERNEL - 1 { n.saturating_sub(k - 1) } else { n };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_tap(
    out: &mut [Vec<f64>; 4],
    o: usize,
    x: &[&[f64]; 4],
    w: Quaternion,
    t: usize,
    f: usize,
    kt: usize,
    kf: usize,
) {
    if w == Quaternion::ZERO {
        return;
    }
    let (t0, t1) = tap_range(kt, t);
    let (f0, f1) = tap_range(kf, f);
    let [ow, ox, oy, oz] = out;
    for ti in t0..t1 {
        let src_row = (ti + kt - 1) * f;
        let dst_row = o + ti * f;
        for fi in f0..f1 {
            let s = src_row + fi + kf - 1;
            let d = dst_row + fi;
            let (xw, xx, xy, xz) = (x[0][s], x[1][s], x[2][s], x[3][s]);
            ow[d] += w.w * xw - w.x * xx - w.y * xy - w.z * xz;
            ox[d] += w.w * xx + w.x * xw + w.y * xz - w.z * xy;
            oy[d] += w.w * xy - w.x * xz + w.y * xw + w.z * xx;
            oz[d] += w.w * xz + w.x * xy - w.y * xx + w.z * xw;
        }
    }
}

/// Input gradient `conj(w) ⊗ g` is scattered into `gin`; returns the kernel
/// tap gradient `Σ g ⊗ conj(x)`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn tap_backward(
    gin: &mut [Vec<f64>; 4],
    o: usize,
    x: &[&[f64]; 4],
    g: &[&[f64]; 4],
    w: Quaternion,
    t: usize,
    f: usize,
    kt: usize,
    kf: usize,
) -> Quaternion {
    let (t0, t1) = tap_range(kt, t);
    let (f0, f1) = tap_range(kf, f);
    let c = w.conjugate();
    let mut dw = [0.0; 4];
    let [iw, ix, iy, iz] = gin;
    for ti in t0..t1 {
        let src_row = (ti + kt - 1) * f;
        let out_row = ti * f;
        for fi in f0..f1 {
            let s = src_row + fi + kf - 1;
            let d = out_row + fi;
            let (gw, gx, gy, gz) = (g[0][d], g[1][d], g[2][d], g[3][d]);
            let (xw, xx, xy, xz) = (x[0][s], -x[1][s], -x[2][s], -x[3][s]);
            // g ⊗ conj(x)
            dw[0] += gw * xw - gx * xx - gy * xy - gz * xz;
            dw[1] += gw * xx + gx * xw + gy * xz - gz * xy;
            dw[2] += gw * xy - gx * xz + gy * xw + gz * xx;
            dw[3] += gw * xz + gx * xy - gy * xx + gz * xw;
            // conj(w) ⊗ g
            let si = o + s;
            iw[si] += c.w * gw - c.x * gx - c.y * gy - c.z * gz;
            ix[si] += c.w * gx + c.x * gw + c.y * gz - c.z * gy;
            iy[si] += c.w * gy - c.x * gz + c.y * gw + c.z * gx;
            iz[si] += c.w * gz + c.x * gy - c.y * gx + c.z * gw;
        }
    }
    Quaternion::from_array(dw)
}

fn assemble(shape: &[usize], items: Vec<[Vec<f64>; 4]>) -> Result<QuatTensor> {
    let mut planes: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::new());
    for item in items {
        for (dst, src) in planes.iter_mut().zip(item) {
            dst.extend(src);
        }
    }
    QuatTensor::from_planes(shape, planes)
}

impl Parameterized for QConv2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_quat(prefix, "kernels", &self.kernels, f);
        visit_quat(prefix, "bias", &self.bias, f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_quat_mut(prefix, "kernels", &mut self.kernels, f);
        visit_quat_mut(prefix, "bias", &mut self.bias, f);
    }
}
