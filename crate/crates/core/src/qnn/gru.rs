//! Real-valued GRU and its bidirectional wrapper, with manual BPTT.
//!
//! Gate order inside the stacked matrices is reset, update, candidate:
//!
//! ```text
//! r = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use crate::error::{Error, Result};
use crate::init::{derive_seed, init_real_uniform};
use crate::params::{join, Parameterized};
use crate::qnn::activation::sigmoid;
use crate::tensor::RealTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub input_size: usize,
    pub hidden: usize,
    /// `[3Q, D]`
    pub w_ih: Vec<f64>,
    /// `[3Q, Q]`
    pub w_hh: Vec<f64>,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Step {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`
    hn: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    input: RealTensor,
    steps: Vec<Step>,
    reverse: bool,
}

fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl Gru {
    pub fn new(input_size: usize, hidden: usize, seed: u64) -> Self {
        let q3 = 3 * hidden;
        Gru {
            input_size,
            hidden,
            w_ih: init_real_uniform(q3 * input_size, hidden, derive_seed(seed, 1)),
            w_hh: init_real_uniform(q3 * hidden, hidden, derive_seed(seed, 2)),
            b_ih: vec![0.0; q3],
            b_hh: vec![0.0; q3],
        }
    }

    fn zeros(input_size: usize, hidden: usize) -> Self {
        let q3 = 3 * hidden;
        Gru {
            input_size,
            hidden,
            w_ih: vec![0.0; q3 * input_size],
            w_hh: vec![0.0; q3 * hidden],
            b_ih: vec![0.0; q3],
            b_hh: vec![0.0; q3],
        }
    }

    /// Runs the recurrence from a zero state; `reverse` walks the sequence
    /// backwards but writes outputs at their original frame index.
    pub fn forward(&self, seq: &RealTensor, reverse: bool) -> Result<(RealTensor, GruCache)> {
        let &[t_len, d] = seq.shape() else {
            return Err(Error::shape(format!("GRU input must be [T, D], got {:?}", seq.shape())));
        };
        if d != self.input_size {
            return Err(Error::shape(format!("GRU expects {} input features, got {d}", self.input_size)));
        }
        if t_len == 0 {
            return Err(Error::shape("GRU needs at least one frame"));
        }
        let q = self.hidden;
        let mut out = vec![0.0; t_len * q];
        let mut steps = Vec::with_capacity(t_len);
        let mut h = vec![0.0; q];
        for s in 0..t_len {
            let t = if reverse { t_len - 1 - s } else { s };
            let mut ai = self.b_ih.clone();
            matvec_acc(&mut ai, &self.w_ih, seq.row(t));
            let mut ah = self.b_hh.clone();
            matvec_acc(&mut ah, &self.w_hh, &h);
            let r: Vec<f64> = (0..q).map(|j| sigmoid(ai[j] + ah[j])).collect();
            let z: Vec<f64> = (0..q).map(|j| sigmoid(ai[q + j] + ah[q + j])).collect();
            let hn = ah[2 * q..].to_vec();
            let n: Vec<f64> = (0..q).map(|j| (ai[2 * q + j] + r[j] * hn[j]).tanh()).collect();
            let h_new: Vec<f64> = (0..q).map(|j| (1.0 - z[j]) * n[j] + z[j] * h[j]).collect();
            out[t * q..(t + 1) * q].copy_from_slice(&h_new);
            steps.push(Step { h_prev: std::mem::replace(&mut h, h_new), r, z, n, hn });
        }
        Ok((RealTensor::from_vec(&[t_len, q], out)?, GruCache { input: seq.clone(), steps, reverse }))
    }

    pub fn backward(&self, cache: &GruCache, grad_out: &RealTensor) -> Result<(RealTensor, Gru)> {
        let t_len = cache.steps.len();
        let q = self.hidden;
        let d = self.input_size;
        if grad_out.shape() != [t_len, q] {
            return Err(Error::shape(format!(
                "GRU output gradient {:?} does not match [{t_len}, {q}]",
                grad_out.shape()
            )));
        }
        let mut grads = Gru::zeros(d, q);
        let mut gin = vec![0.0; t_len * d];
        let mut carry = vec![0.0; q];
        for s in (0..t_len).rev() {
            let t = if cache.reverse { t_len - 1 - s } else { s };
            let st = &cache.steps[s];
            let x = cache.input.row(t);
            let g = grad_out.row(t);
            let mut dai = vec![0.0; 3 * q];
            let mut dah = vec![0.0; 3 * q];
            let mut dh_prev = vec![0.0; q];
            for j in 0..q {
                let dh = g[j] + carry[j];
                let dn = dh * (1.0 - st.z[j]);
                let dz = dh * (st.h_prev[j] - st.n[j]);
                dh_prev[j] = dh * st.z[j];
                let dan = dn * (1.0 - st.n[j] * st.n[j]);
                let dr = dan * st.hn[j];
                let dar = dr * st.r[j] * (1.0 - st.r[j]);
                let daz = dz * st.z[j] * (1.0 - st.z[j]);
                dai[j] = dar;
                dai[q + j] = daz;
                dai[2 * q + j] = dan;
                dah[j] = dar;
                dah[q + j] = daz;
                dah[2 * q + j] = dan * st.r[j];
            }
            for row in 0..3 * q {
                let (a, b) = (dai[row], dah[row]);
                grads.b_ih[row] += a;
                grads.b_hh[row] += b;
                let wi = &self.w_ih[row * d..(row + 1) * d];
                let gwi = &mut grads.w_ih[row * d..(row + 1) * d];
                let gx = &mut gin[t * d..(t + 1) * d];
                for i in 0..d {
                    gwi[i] += a * x[i];
                    gx[i] += a * wi[i];
                }
                let wh = &self.w_hh[row * q..(row + 1) * q];
                let gwh = &mut grads.w_hh[row * q..(row + 1) * q];
                for i in 0..q {
                    gwh[i] += b * st.h_prev[i];
                    dh_prev[i] += b * wh[i];
                }
            }
            carry = dh_prev;
        }
        Ok((RealTensor::from_vec(&[t_len, d], gin)?, grads))
    }
}

impl Parameterized for Gru {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let (d, q3) = (self.input_size, 3 * self.hidden);
        f(&join(prefix, "w_ih"), &[q3, d], &self.w_ih);
        f(&join(prefix, "w_hh"), &[q3, self.hidden], &self.w_hh);
        f(&join(prefix, "b_ih"), &[q3], &self.b_ih);
        f(&join(prefix, "b_hh"), &[q3], &self.b_hh);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "b_ih"), &mut self.b_ih);
        f(&join(prefix, "b_hh"), &mut self.b_hh);
    }
}

/// Forward and backward GRUs; each output frame is `[h_fwd, h_bwd]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub forward_cell: Gru,
    pub backward_cell: Gru,
}

#[derive(Debug, Clone)]
pub struct BiGruCache {
    fwd: GruCache,
    bwd: GruCache,
}

impl BiGru {
    pub fn new(input_size: usize, hidden: usize, seed: u64) -> Self {
        BiGru {
            forward_cell: Gru::new(input_size, hidden, derive_seed(seed, 10)),
            backward_cell: Gru::new(input_size, hidden, derive_seed(seed, 11)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward_cell.hidden
    }

    pub fn input_size(&self) -> usize {
        self.forward_cell.input_size
    }

    pub fn forward(&self, seq: &RealTensor) -> Result<(RealTensor, BiGruCache)> {
        let (hf, fwd) = self.forward_cell.forward(seq, false)?;
        let (hb, bwd) = self.backward_cell.forward(seq, true)?;
        let t_len = seq.shape()[0];
        let q = self.hidden();
        let mut out = vec![0.0; t_len * 2 * q];
        for t in 0..t_len {
            out[t * 2 * q..t * 2 * q + q].copy_from_slice(hf.row(t));
            out[t * 2 * q + q..(t + 1) * 2 * q].copy_from_slice(hb.row(t));
        }
        Ok((RealTensor::from_vec(&[t_len, 2 * q], out)?, BiGruCache { fwd, bwd }))
    }

    pub fn backward(&self, cache: &BiGruCache, grad_out: &RealTensor) -> Result<(RealTensor, BiGru)> {
        let q = self.hidden();
        let t_len = cache.fwd.steps.len();
        if grad_out.shape() != [t_len, 2 * q] {
            return Err(Error::shape(format!(
                "BiGRU output gradient {:?} does not match [{t_len}, {}]",
                grad_out.shape(),
                2 * q
            )));
        }
        let mut gf = vec![0.0; t_len * q];
        let mut gb = vec![0.0; t_len * q];
        for t in 0..t_len {
            let row = grad_out.row(t);
            gf[t * q..(t + 1) * q].copy_from_slice(&row[..q]);
            gb[t * q..(t + 1) * q].copy_from_slice(&row[q..]);
        }
        let (gin_f, grads_f) = self.forward_cell.backward(&cache.fwd, &RealTensor::from_vec(&[t_len, q], gf)?)?;
        let (gin_b, grads_b) = self.backward_cell.backward(&cache.bwd, &RealTensor::from_vec(&[t_len, q], gb)?)?;
        let gin: Vec<f64> = gin_f.data().iter().zip(gin_b.data()).map(|(a, b)| a + b).collect();
        Ok((
            RealTensor::from_vec(gin_f.shape(), gin)?,
            BiGru { forward_cell: grads_f, backward_cell: grads_b },
        ))
    }
}

impl Parameterized for BiGru {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.forward_cell.visit_params(&join(prefix, "fwd"), f);
        self.backward_cell.visit_params(&join(prefix, "bwd"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.forward_cell.visit_params_mut(&join(prefix, "fwd"), f);
        self.backward_cell.visit_params_mut(&join(prefix, "bwd"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::fill_params;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut layer = BiGru::new(3, 4, 7);
        fill_params(&mut layer, 0.0);
        let seq = RealTensor::from_vec(&[5, 3], (0..15).map(|i| i as f64 - 7.0).collect()).unwrap();
        let (out, _) = layer.forward(&seq).unwrap();
        assert_eq!(out.shape(), &[5, 8]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_is_deterministic() {
        let layer = BiGru::new(2, 3, 1);
        let seq = RealTensor::from_vec(&[1, 2], vec![0.4, -1.3]).unwrap();
        let (a, _) = layer.forward(&seq).unwrap();
        let (b, _) = layer.forward(&seq).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_step_by_hand() {
        // D = Q = 1 with hand-picked weights
        let cell = Gru {
            input_size: 1,
            hidden: 1,
            w_ih: vec![0.5, -1.0, 2.0],
            w_hh: vec![0.0; 3],
            b_ih: vec![0.1, 0.2, -0.3],
            b_hh: vec![0.0, 0.0, 0.4],
        };
        let x = 0.8;
        let r = sigmoid(0.5 * x + 0.1);
        let z = sigmoid(-x + 0.2);
        let n = (2.0 * x - 0.3 + r * 0.4).tanh();
        let expected = (1.0 - z) * n;
        let (out, _) = cell.forward(&RealTensor::from_vec(&[1, 1], vec![x]).unwrap(), false).unwrap();
        assert!((out.data()[0] - expected).abs() < 1e-15);
    }
}
