//! Uniform access to trainable parameters.
//!
//! Gradients are represented by a value of the same type as the layer or
//! model they belong to, so both sides are visited in the same order.

use serde::{Deserialize, Serialize};

use crate::quat::QuatTensor;

/// A named, shaped block of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub trait Parameterized {
    /// Visit every trainable tensor in a fixed order.
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    /// Non-trainable state that must survive a checkpoint (running statistics).
    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &[usize], &[f64])) {}

    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut [f64])) {}
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

const PLANE_NAMES: [&str; 4] = ["w", "x", "y", "z"];

pub(crate) fn visit_quat(
    prefix: &str,
    name: &str,
    t: &QuatTensor,
    f: &mut dyn FnMut(&str, &[usize], &[f64]),
) {
    for (k, plane) in PLANE_NAMES.iter().enumerate() {
        f(&join(prefix, &format!("{name}.{plane}")), t.shape(), t.plane(k));
    }
}

pub(crate) fn visit_quat_mut(
    prefix: &str,
    name: &str,
    t: &mut QuatTensor,
    f: &mut dyn FnMut(&str, &mut [f64]),
) {
    for (k, plane) in PLANE_NAMES.iter().enumerate() {
        f(&join(prefix, &format!("{name}.{plane}")), t.plane_mut(k));
    }
}

pub fn param_count(p: &impl Parameterized) -> usize {
    let mut n = 0;
    p.visit_params("", &mut |_, _, d| n += d.len());
    n
}

/// All parameters concatenated in visiting order.
pub fn flatten(p: &impl Parameterized) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit_params("", &mut |_, _, d| out.extend_from_slice(d));
    out
}

/// Overwrite all parameters from a flat vector in visiting order.
pub fn assign_flat(p: &mut impl Parameterized, values: &[f64]) {
    let mut off = 0;
    p.visit_params_mut("", &mut |_, d| {
        d.copy_from_slice(&values[off..off + d.len()]);
        off += d.len();
    });
    assert_eq!(off, values.len(), "flat parameter vector has the wrong length");
}

pub fn fill_params(p: &mut impl Parameterized, value: f64) {
    p.visit_params_mut("", &mut |_, d| d.fill(value));
}

/// `acc += other`, parameter by parameter.
pub fn accumulate<P: Parameterized>(acc: &mut P, other: &P) {
    let src = flatten(other);
    let mut off = 0;
    acc.visit_params_mut("", &mut |_, d| {
        for v in d.iter_mut() {
            *v += src[off];
            off += 1;
        }
    });
}

/// A zeroed copy, used as a gradient accumulator.
pub fn zeros_like<P: Parameterized + Clone>(p: &P) -> P {
    let mut z = p.clone();
    fill_params(&mut z, 0.0);
    z
}

pub fn named_params(p: &impl Parameterized) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    p.visit_params("", &mut |name, shape, d| {
        out.push(NamedTensor { name: name.to_string(), shape: shape.to_vec(), data: d.to_vec() })
    });
    out
}

pub fn named_buffers(p: &impl Parameterized) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    p.visit_buffers("", &mut |name, shape, d| {
        out.push(NamedTensor { name: name.to_string(), shape: shape.to_vec(), data: d.to_vec() })
    });
    out
}

/// Largest absolute parameter value, handy for NaN/divergence checks.
pub fn max_abs(p: &impl Parameterized) -> f64 {
    let mut m: f64 = 0.0;
    p.visit_params("", &mut |_, _, d| {
        for v in d {
            if v.is_nan() {
                m = f64::NAN;
            } else if !m.is_nan() {
                m = m.max(v.abs());
            }
        }
    });
    m
}
