//! Fully connected layers: the quaternion `y = α(W ⊗ x + b)` and the real
//! `y = f(W x + b)` used by the output branches.

use crate::error::{Error, Result};
use crate::init::{init_quaternion_tensor, init_real_uniform, InitSpec};
use crate::params::{join, visit_quat, visit_quat_mut, Parameterized};
use crate::qnn::activation::Activation;
use crate::quat::{QuatTensor, Quaternion};
use crate::tensor::RealTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct QDense {
    /// `[out, in]`
    pub weights: QuatTensor,
    /// `[out]`
    pub bias: QuatTensor,
    pub activation: Activation,
}

/// Cache of a quaternion dense forward pass.
#[derive(Debug, Clone)]
pub struct QDenseCache {
    pub input: QuatTensor,
    pub pre: QuatTensor,
    pub output: QuatTensor,
}

impl QDense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, seed: u64) -> Result<Self> {
        let weights = init_quaternion_tensor(&[outputs, inputs], InitSpec { fan_in: inputs, seed })?;
        Ok(QDense { weights, bias: QuatTensor::zeros(&[outputs]), activation })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Forward on `[in]` or a batch of rows `[n, in]`.
    pub fn forward(&self, input: &QuatTensor) -> Result<QDenseCache> {
        let (rows, inp) = match input.shape() {
            &[i] => (1, i),
            &[n, i] => (n, i),
            s => return Err(Error::shape(format!("dense input must be [in] or [n, in], got {s:?}"))),
        };
        if inp != self.inputs() {
            return Err(Error::shape(format!(
                "dense layer expects {} inputs, got {inp}",
                self.inputs()
            )));
        }
        let out = self.outputs();
        let shape: Vec<usize> = if input.ndim() == 1 { vec![out] } else { vec![rows, out] };
        let mut pre = QuatTensor::zeros(&shape);
        for r in 0..rows {
            for o in 0..out {
                let mut acc = self.bias.get(o);
                for i in 0..inp {
                    acc += self.weights.get(o * inp + i) * input.get(r * inp + i);
                }
                pre.set(r * out + o, acc);
            }
        }
        let output = pre.map_planes(|v| self.activation.apply(v));
        Ok(QDenseCache { input: input.clone(), pre, output })
    }

    pub fn backward(&self, cache: &QDenseCache, grad_out: &QuatTensor) -> Result<(QuatTensor, QDense)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.shape(),
                cache.output.shape()
            )));
        }
        let g_pre = crate::qnn::activation::split_activation_backward(
            &cache.pre,
            &cache.output,
            grad_out,
            self.activation,
        );
        let (inp, out) = (self.inputs(), self.outputs());
        let rows = cache.input.len() / inp;
        let mut gin = QuatTensor::zeros(cache.input.shape());
        let mut gw = QuatTensor::zeros(self.weights.shape());
        let mut gb = QuatTensor::zeros(self.bias.shape());
        for r in 0..rows {
            for o in 0..out {
                let g = g_pre.get(r * out + o);
                gb.add_at(o, g);
                for i in 0..inp {
                    let x = cache.input.get(r * inp + i);
                    gw.add_at(o * inp + i, g * x.conjugate());
                    gin.add_at(r * inp + i, self.weights.get(o * inp + i).conjugate() * g);
                }
            }
        }
        Ok((gin, QDense { weights: gw, bias: gb, activation: self.activation }))
    }
}

impl Parameterized for QDense {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_quat(prefix, "weights", &self.weights, f);
        visit_quat(prefix, "bias", &self.bias, f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_quat_mut(prefix, "weights", &mut self.weights, f);
        visit_quat_mut(prefix, "bias", &mut self.bias, f);
    }
}

/// Real fully connected layer applied row-wise to `[n, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: RealTensor,
    pub pre: RealTensor,
    pub output: RealTensor,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, seed: u64) -> Self {
        Dense {
            weights: init_real_uniform(inputs * outputs, inputs, seed),
            bias: vec![0.0; outputs],
            inputs,
            outputs,
            activation,
        }
    }

    pub fn forward(&self, input: &RealTensor) -> Result<DenseCache> {
        let &[rows, inp] = input.shape() else {
            return Err(Error::shape(format!("dense input must be [n, in], got {:?}", input.shape())));
        };
        if inp != self.inputs {
            return Err(Error::shape(format!("dense layer expects {} inputs, got {inp}", self.inputs)));
        }
        let mut pre = vec![0.0; rows * self.outputs];
        for r in 0..rows {
            let x = input.row(r);
            for o in 0..self.outputs {
                let w = &self.weights[o * inp..(o + 1) * inp];
                pre[r * self.outputs + o] =
                    self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let output = self.activation.apply_slice(&pre);
        Ok(DenseCache {
            input: input.clone(),
            pre: RealTensor::from_vec(&[rows, self.outputs], pre)?,
            output: RealTensor::from_vec(&[rows, self.outputs], output)?,
        })
    }

    pub fn backward(&self, cache: &DenseCache, grad_out: &RealTensor) -> Result<(RealTensor, Dense)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.shape(),
                cache.output.shape()
            )));
        }
        let g_pre = self
            .activation
            .backward_slice(cache.pre.data(), cache.output.data(), grad_out.data());
        let rows = cache.input.shape()[0];
        let (inp, out) = (self.inputs, self.outputs);
        let mut gin = vec![0.0; rows * inp];
        let mut gw = vec![0.0; inp * out];
        let mut gb = vec![0.0; out];
        for r in 0..rows {
            let x = cache.input.row(r);
            for o in 0..out {
                let g = g_pre[r * out + o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let w = &self.weights[o * inp..(o + 1) * inp];
                let gw_row = &mut gw[o * inp..(o + 1) * inp];
                let gin_row = &mut gin[r * inp..(r + 1) * inp];
                for i in 0..inp {
                    gw_row[i] += g * x[i];
                    gin_row[i] += g * w[i];
                }
            }
        }
        Ok((
            RealTensor::from_vec(&[rows, inp], gin)?,
            Dense { weights: gw, bias: gb, inputs: inp, outputs: out, activation: self.activation },
        ))
    }
}

impl Parameterized for Dense {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "weights"), &[self.outputs, self.inputs], &self.weights);
        f(&join(prefix, "bias"), &[self.outputs], &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "weights"), &mut self.weights);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Identity quaternion matrix `[n, n]`.
pub fn quat_identity(n: usize) -> QuatTensor {
    let mut t = QuatTensor::zeros(&[n, n]);
    for i in 0..n {
        t.set(i * n + i, Quaternion::ONE);
    }
    t
}
