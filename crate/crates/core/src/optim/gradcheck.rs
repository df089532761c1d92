//! Central finite-difference gradient checking.
//!
//! Relative error per entry is `|a − n| / max(|a|, |n|, 1e-8)` where `a` is
//! the analytic and `n` the numerical derivative, with step `h = 1e-5`.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{derive_seed, rng_from_seed, SeededRng};
use crate::optim::loss::{bce_loss, masked_mse_loss};
use crate::params::{assign_flat, flatten, Parameterized};
use crate::qnn::activation::{split_activation, split_activation_backward, Activation};
use crate::qnn::batchnorm::{BatchNorm, Mode, SplitBatchNorm};
use crate::qnn::conv::QConv2d;
use crate::qnn::dense::{Dense, QDense};
use crate::qnn::gru::BiGru;
use crate::qnn::pool::{max_pool_freq, max_pool_freq_backward};
use crate::qnn::real_conv::Conv2d;
use crate::quat::QuatTensor;
use crate::tensor::RealTensor;

pub const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Parameter (or input) entry with the largest relative error.
    pub worst_param: String,
    /// Analytic and numerical derivative at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
    /// Entries left out because the ±h stencil crossed a ReLU or max-pool
    /// boundary, where the loss is not differentiable.
    pub skipped: usize,
}

impl GradReport {
    pub fn empty() -> Self {
        GradReport { max_rel_err: 0.0, worst_param: String::new(), worst_values: (0.0, 0.0), checked: 0, skipped: 0 }
    }

    fn record(&mut self, name: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_err || e.is_nan() {
            self.max_rel_err = e;
            self.worst_param = name();
            self.worst_values = (analytic, numeric);
        }
    }

    pub fn merge(mut self, other: GradReport) -> GradReport {
        if other.max_rel_err > self.max_rel_err || other.max_rel_err.is_nan() {
            self.max_rel_err = other.max_rel_err;
            self.worst_param = other.worst_param;
            self.worst_values = other.worst_values;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
        self
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max_rel_err={:.3e} worst={} (analytic {:.6e}, numeric {:.6e}) checked={}",
            self.max_rel_err, self.worst_param, self.worst_values.0, self.worst_values.1, self.checked
        )?;
        if self.skipped > 0 {
            write!(f, " skipped_nonsmooth={}", self.skipped)?;
        }
        Ok(())
    }
}

fn param_names(p: &impl Parameterized) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    p.visit_params("", &mut |name, _, d| out.push((name.to_string(), d.len())));
    out
}

fn central(plus: &[f64], minus: &[f64]) -> Result<f64> {
    if plus.len() != minus.len() {
        return Err(Error::shape("loss returned a different number of terms"));
    }
    Ok(plus.iter().zip(minus).map(|(p, m)| p - m).sum::<f64>() / (2.0 * STEP))
}

/// Checks every parameter of `model` against `analytic`, a gradient of the
/// same shape, by perturbing one entry at a time.
pub fn check_params<M: Parameterized + Clone>(
    model: &M,
    analytic: &M,
    mut loss: impl FnMut(&M) -> Result<f64>,
) -> Result<GradReport> {
    check_params_smooth(model, analytic, |m| Ok((vec![loss(m)?], true)))
}

/// Like [`check_params`], for piecewise-smooth losses given as a sum of
/// terms. `loss` returns the terms and whether the probe point lies on the
/// same smooth piece as the base point; entries whose stencil leaves it are
/// counted as skipped. Differences are taken term by term before summing,
/// which keeps cancellation error at the scale of one term rather than of the
/// whole loss.
pub fn check_params_smooth<M: Parameterized + Clone>(
    model: &M,
    analytic: &M,
    mut loss: impl FnMut(&M) -> Result<(Vec<f64>, bool)>,
) -> Result<GradReport> {
    let mut theta = flatten(model);
    let grads = flatten(analytic);
    if grads.len() != theta.len() {
        return Err(Error::shape("analytic gradient does not mirror the parameters"));
    }
    let names = param_names(model);
    let mut probe = model.clone();
    let mut report = GradReport::empty();
    let mut idx = 0;
    for (name, len) in names {
        for local in 0..len {
            let orig = theta[idx];
            theta[idx] = orig + STEP;
            assign_flat(&mut probe, &theta);
            let (plus, smooth_p) = loss(&probe)?;
            theta[idx] = orig - STEP;
            assign_flat(&mut probe, &theta);
            let (minus, smooth_m) = loss(&probe)?;
            theta[idx] = orig;
            if smooth_p && smooth_m {
                report.record(|| format!("{name}[{local}]"), grads[idx], central(&plus, &minus)?);
            } else {
                report.skipped += 1;
            }
            idx += 1;
        }
    }
    Ok(report)
}

/// Checks the gradient with respect to a flat input vector.
pub fn check_input(
    input: &[f64],
    analytic: &[f64],
    label: &str,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<GradReport> {
    check_input_smooth(input, analytic, label, |x| Ok((vec![loss(x)?], true)))
}

pub fn check_input_smooth(
    input: &[f64],
    analytic: &[f64],
    label: &str,
    mut loss: impl FnMut(&[f64]) -> Result<(Vec<f64>, bool)>,
) -> Result<GradReport> {
    if input.len() != analytic.len() {
        return Err(Error::shape("analytic input gradient has the wrong length"));
    }
    let mut x = input.to_vec();
    let mut report = GradReport::empty();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let (plus, smooth_p) = loss(&x)?;
        x[i] = orig - STEP;
        let (minus, smooth_m) = loss(&x)?;
        x[i] = orig;
        if smooth_p && smooth_m {
            report.record(|| format!("{label}[{i}]"), analytic[i], central(&plus, &minus)?);
        } else {
            report.skipped += 1;
        }
    }
    Ok(report)
}

pub fn quat_from_stacked(shape: &[usize], stacked: &[f64]) -> Result<QuatTensor> {
    let n = stacked.len() / 4;
    QuatTensor::from_planes(
        shape,
        std::array::from_fn(|k| stacked[k * n..(k + 1) * n].to_vec()),
    )
}

pub fn random_vec(rng: &mut SeededRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_quat(rng: &mut SeededRng, shape: &[usize], scale: f64) -> QuatTensor {
    let n: usize = shape.iter().product();
    QuatTensor::from_planes(shape, std::array::from_fn(|_| random_vec(rng, n, scale))).expect("consistent shape")
}

/// Terms of the scalar test loss `Σ r·y` for projection weights `r`.
fn dot(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn quat_dot(r: &QuatTensor, y: &QuatTensor) -> Vec<f64> {
    (0..4).flat_map(|k| dot(r.plane(k), y.plane(k))).collect()
}

fn check_param_terms<M: Parameterized + Clone>(
    model: &M,
    analytic: &M,
    mut loss: impl FnMut(&M) -> Result<Vec<f64>>,
) -> Result<GradReport> {
    check_params_smooth(model, analytic, |m| Ok((loss(m)?, true)))
}

fn check_input_terms(
    input: &[f64],
    analytic: &[f64],
    label: &str,
    mut loss: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<GradReport> {
    check_input_smooth(input, analytic, label, |x| Ok((loss(x)?, true)))
}

/// Layer (or loss) families covered by the stock gradient suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Qconv2d,
    Qdense,
    Activation,
    Batchnorm,
    Pool,
    Bigru,
    Dense,
    Conv2d,
    Bce,
    Mse,
    Model,
}

impl GradTarget {
    pub const ALL: [GradTarget; 11] = [
        GradTarget::Qconv2d,
        GradTarget::Qdense,
        GradTarget::Activation,
        GradTarget::Batchnorm,
        GradTarget::Pool,
        GradTarget::Bigru,
        GradTarget::Dense,
        GradTarget::Conv2d,
        GradTarget::Bce,
        GradTarget::Mse,
        GradTarget::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradTarget::Qconv2d => "qconv2d",
            GradTarget::Qdense => "qdense",
            GradTarget::Activation => "activation",
            GradTarget::Batchnorm => "batchnorm",
            GradTarget::Pool => "pool",
            GradTarget::Bigru => "bigru",
            GradTarget::Dense => "dense",
            GradTarget::Conv2d => "conv2d",
            GradTarget::Bce => "bce",
            GradTarget::Mse => "mse",
            GradTarget::Model => "model",
        }
    }

    pub fn parse(s: &str) -> Option<GradTarget> {
        GradTarget::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Tolerance the target must meet.
    pub fn tolerance(self) -> f64 {
        match self {
            GradTarget::Model => 1e-5,
            _ => 1e-6,
        }
    }

    pub fn run(self, seed: u64) -> Result<GradReport> {
        match self {
            GradTarget::Qconv2d => check_qconv2d(seed),
            GradTarget::Qdense => check_qdense(seed),
            GradTarget::Activation => check_activations(seed),
            GradTarget::Batchnorm => check_batchnorm(seed),
            GradTarget::Pool => check_pool(seed),
            GradTarget::Bigru => check_bigru(seed),
            GradTarget::Dense => check_dense(seed),
            GradTarget::Conv2d => check_conv2d(seed),
            GradTarget::Bce => check_bce(seed),
            GradTarget::Mse => check_mse(seed),
            GradTarget::Model => crate::model::gradcheck_desk_model(seed),
        }
    }
}

pub fn check_qconv2d(seed: u64) -> Result<GradReport> {
    let shapes = [(1, 1, 2, 3, 4), (2, 2, 3, 4, 5), (2, 3, 2, 5, 3)];
    let mut report = GradReport::empty();
    for (case, &(b, c, p, t, f)) in shapes.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, case as u64));
        let mut layer = QConv2d::new(c, p, rng.random())?;
        layer.bias = random_quat(&mut rng, &[p], 0.5);
        let x = random_quat(&mut rng, &[b, c, t, f], 1.0);
        let r = random_quat(&mut rng, &[b, p, t, f], 1.0);
        let (gin, grads) = layer.backward(&x, &r)?;
        report = report.merge(check_param_terms(&layer, &grads, |l| Ok(quat_dot(&r, &l.forward(&x)?)))?);
        report = report.merge(check_input_terms(&x.to_stacked(), &gin.to_stacked(), "qconv2d.input", |v| {
            Ok(quat_dot(&r, &layer.forward(&quat_from_stacked(x.shape(), v)?)?))
        })?);
    }
    Ok(report)
}

pub fn check_qdense(seed: u64) -> Result<GradReport> {
    let cases = [(1, 3, 2, Activation::Linear), (4, 2, 3, Activation::Tanh), (3, 4, 4, Activation::Sigmoid)];
    let mut report = GradReport::empty();
    for (case, &(rows, inp, out, act)) in cases.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, 100 + case as u64));
        let mut layer = QDense::new(inp, out, act, rng.random())?;
        layer.bias = random_quat(&mut rng, &[out], 0.5);
        let x = random_quat(&mut rng, &[rows, inp], 1.0);
        let r = random_quat(&mut rng, &[rows, out], 1.0);
        let cache = layer.forward(&x)?;
        let (gin, grads) = layer.backward(&cache, &r)?;
        report = report.merge(check_param_terms(&layer, &grads, |l| Ok(quat_dot(&r, &l.forward(&x)?.output)))?);
        report = report.merge(check_input_terms(&x.to_stacked(), &gin.to_stacked(), "qdense.input", |v| {
            Ok(quat_dot(&r, &layer.forward(&quat_from_stacked(x.shape(), v)?)?.output))
        })?);
    }
    Ok(report)
}

pub fn check_activations(seed: u64) -> Result<GradReport> {
    let mut report = GradReport::empty();
    let kinds = [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Linear];
    for (case, kind) in kinds.into_iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, 200 + case as u64));
        let shape = [2, 3, 4];
        let x = random_quat(&mut rng, &shape, 2.0);
        let r = random_quat(&mut rng, &shape, 1.0);
        let y = split_activation(&x, kind);
        let gin = split_activation_backward(&x, &y, &r, kind);
        report = report.merge(check_input_terms(&x.to_stacked(), &gin.to_stacked(), &format!("{kind:?}.input"), |v| {
            Ok(quat_dot(&r, &split_activation(&quat_from_stacked(&shape, v)?, kind)))
        })?);
    }
    Ok(report)
}

pub fn check_batchnorm(seed: u64) -> Result<GradReport> {
    let shapes = [(2, 1, 2, 3), (3, 2, 3, 2), (4, 1, 1, 5)];
    let mut report = GradReport::empty();
    for (case, &(b, c, t, f)) in shapes.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, 300 + case as u64));
        let mut bn = SplitBatchNorm::new(c);
        bn.inner.gamma = random_vec(&mut rng, 4 * c, 1.5);
        bn.inner.beta = random_vec(&mut rng, 4 * c, 1.0);
        let x = random_quat(&mut rng, &[b, c, t, f], 2.0);
        let r = random_quat(&mut rng, &[b, c, t, f], 1.0);
        for mode in [Mode::Train, Mode::Eval] {
            if mode == Mode::Eval {
                bn.inner.running_mean = random_vec(&mut rng, 4 * c, 0.5);
                bn.inner.running_var = random_vec(&mut rng, 4 * c, 0.5).iter().map(|v| 1.0 + v).collect();
            }
            let (_, cache) = bn.forward(&x, mode)?;
            let (gin, grads) = bn.backward(&cache, &r)?;
            report = report.merge(check_param_terms(&bn, &grads, |l| Ok(quat_dot(&r, &l.forward(&x, mode)?.0)))?);
            report = report.merge(check_input_terms(&x.to_stacked(), &gin.to_stacked(), "batchnorm.input", |v| {
                Ok(quat_dot(&r, &bn.forward(&quat_from_stacked(x.shape(), v)?, mode)?.0))
            })?);
        }
    }
    Ok(report)
}

pub fn check_pool(seed: u64) -> Result<GradReport> {
    let cases = [(&[1usize, 2, 4][..], 2usize), (&[2, 3, 8][..], 4), (&[2, 1, 3, 6][..], 3)];
    let mut report = GradReport::empty();
    for (case, &(shape, factor)) in cases.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, 400 + case as u64));
        let x = random_quat(&mut rng, shape, 1.0);
        let (y, idx) = max_pool_freq(&x, factor)?;
        let r = random_quat(&mut rng, y.shape(), 1.0);
        let gin = max_pool_freq_backward(&r, &idx, shape)?;
        report = report.merge(check_input_terms(&x.to_stacked(), &gin.to_stacked(), "pool.input", |v| {
            Ok(quat_dot(&r, &max_pool_freq(&quat_from_stacked(shape, v)?, factor)?.0))
        })?);
    }
    Ok(report)
}

pub fn check_bigru(seed: u64) -> Result<GradReport> {
    let cases = [(3, 2, 2), (1, 3, 2), (5, 4, 3)];
    let mut report = GradReport::empty();
    for (case, &(t, d, q)) in cases.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, 500 + case as u64));
        let mut layer = BiGru::new(d, q, rng.random());
        // non-zero biases so every term is exercised
        layer.forward_cell.b_ih = random_vec(&mut rng, 3 * q, 0.5);
        layer.backward_cell.b_hh = random_vec(&mut rng, 3 * q, 0.5);
        let x = RealTensor::from_vec(&[t, d], random_vec(&mut rng, t * d, 1.0))?;
        let r = RealTensor::from_vec(&[t, 2 * q], random_vec(&mut rng, t * 2 * q, 1.0))?;
        let (_, cache) = layer.forward(&x)?;
        let (gin, grads) = layer.backward(&cache, &r)?;
        report = report.merge(check_param_terms(&layer, &grads, |l| Ok(dot(r.data(), l.forward(&x)?.0.data())))?);
        report = report.merge(check_input_terms(x.data(), gin.data(), "bigru.input", |v| {
            Ok(dot(r.data(), layer.forward(&RealTensor::from_vec(&[t, d], v.to_vec())?)?.0.data()))
        })?);
    }
    Ok(report)
}

pub fn check_dense(seed: u64) -> Result<GradReport> {
    let cases = [(2, 3, 4, Activation::Linear), (3, 5, 2, Activation::Sigmoid), (4, 2, 6, Activation::Tanh)];
    let mut report = GradReport::empty();
    for (case, &(rows, inp, out, act)) in cases.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, 600 + case as u64));
        let mut layer = Dense::new(inp, out, act, rng.random());
        layer.bias = random_vec(&mut rng, out, 0.5);
        let x = RealTensor::from_vec(&[rows, inp], random_vec(&mut rng, rows * inp, 1.0))?;
        let r = RealTensor::from_vec(&[rows, out], random_vec(&mut rng, rows * out, 1.0))?;
        let cache = layer.forward(&x)?;
        let (gin, grads) = layer.backward(&cache, &r)?;
        report = report.merge(check_param_terms(&layer, &grads, |l| Ok(dot(r.data(), l.forward(&x)?.output.data())))?);
        report = report.merge(check_input_terms(x.data(), gin.data(), "dense.input", |v| {
            Ok(dot(r.data(), layer.forward(&RealTensor::from_vec(&[rows, inp], v.to_vec())?)?.output.data()))
        })?);
    }
    Ok(report)
}

pub fn check_conv2d(seed: u64) -> Result<GradReport> {
    let shapes = [(1, 1, 2, 3, 3), (2, 3, 2, 4, 5), (2, 2, 3, 2, 6)];
    let mut report = GradReport::empty();
    for (case, &(b, c, p, t, f)) in shapes.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, 700 + case as u64));
        let mut layer = Conv2d::new(c, p, rng.random());
        layer.bias = random_vec(&mut rng, p, 0.5);
        let x = RealTensor::from_vec(&[b, c, t, f], random_vec(&mut rng, b * c * t * f, 1.0))?;
        let r = RealTensor::from_vec(&[b, p, t, f], random_vec(&mut rng, b * p * t * f, 1.0))?;
        let (gin, grads) = layer.backward(&x, &r)?;
        report = report.merge(check_param_terms(&layer, &grads, |l| Ok(dot(r.data(), l.forward(&x)?.data())))?);
        report = report.merge(check_input_terms(x.data(), gin.data(), "conv2d.input", |v| {
            Ok(dot(r.data(), layer.forward(&RealTensor::from_vec(x.shape(), v.to_vec())?)?.data()))
        })?);
    }
    // plain real batch norm too, it backs the baseline network
    let mut rng = rng_from_seed(derive_seed(seed, 750));
    let mut bn = BatchNorm::new(3);
    bn.gamma = random_vec(&mut rng, 3, 1.5);
    let x = RealTensor::from_vec(&[2, 3, 2, 2], random_vec(&mut rng, 24, 2.0))?;
    let r = RealTensor::from_vec(&[2, 3, 2, 2], random_vec(&mut rng, 24, 1.0))?;
    let (_, cache) = bn.forward(&x, Mode::Train)?;
    let (gin, grads) = bn.backward(&cache, &r)?;
    report = report.merge(check_param_terms(&bn, &grads, |l| Ok(dot(r.data(), l.forward(&x, Mode::Train)?.0.data())))?);
    report = report.merge(check_input_terms(x.data(), gin.data(), "batchnorm.real.input", |v| {
        Ok(dot(r.data(), bn.forward(&RealTensor::from_vec(x.shape(), v.to_vec())?, Mode::Train)?.0.data()))
    })?);
    Ok(report)
}

pub fn check_bce(seed: u64) -> Result<GradReport> {
    let mut report = GradReport::empty();
    for case in 0..3u64 {
        let mut rng = rng_from_seed(derive_seed(seed, 800 + case));
        let n = 4 + 3 * case as usize;
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let target: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let (_, grad) = bce_loss(&pred, &target)?;
        report = report.merge(check_input(&pred, &grad, "bce.pred", |p| Ok(bce_loss(p, &target)?.0))?);
    }
    Ok(report)
}

pub fn check_mse(seed: u64) -> Result<GradReport> {
    let mut report = GradReport::empty();
    for case in 0..3u64 {
        let mut rng = rng_from_seed(derive_seed(seed, 900 + case));
        let (rows, classes) = (2 + case as usize, 1 + case as usize);
        let pred = random_vec(&mut rng, rows * 3 * classes, 1.0);
        let target = random_vec(&mut rng, rows * 3 * classes, 1.0);
        let mut mask: Vec<f64> = (0..rows * classes).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        mask[0] = 1.0;
        let (_, grad) = masked_mse_loss(&pred, &target, &mask, classes)?;
        report = report.merge(check_input(&pred, &grad, "mse.pred", |p| {
            Ok(masked_mse_loss(p, &target, &mask, classes)?.0)
        })?);
    }
    Ok(report)
}
