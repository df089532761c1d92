//! Max pooling along the last (frequency) axis only.

use crate::error::{Error, Result};
use crate::quat::QuatTensor;
use crate::tensor::RealTensor;

/// Pool each row of length `f` into `f / factor` maxima; returns the values
/// and, for every output, the flat input index it came from. The first
/// maximum wins ties.
pub fn max_pool_rows(data: &[f64], f: usize, factor: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if factor == 0 || !f.is_multiple_of(factor) {
        return Err(Error::config(format!(
            "frequency extent {f} is not divisible by pool factor {factor}"
        )));
    }
    let fo = f / factor;
    let rows = data.len() / f;
    let mut out = Vec::with_capacity(rows * fo);
    let mut idx = Vec::with_capacity(rows * fo);
    for r in 0..rows {
        for o in 0..fo {
            let start = r * f + o * factor;
            let mut best = start;
            for i in start + 1..start + factor {
                if data[i] > data[best] {
                    best = i;
                }
            }
            out.push(data[best]);
            idx.push(best);
        }
    }
    Ok((out, idx))
}

pub fn max_pool_rows_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&i, &v) in argmax.iter().zip(grad_out) {
        g[i] += v;
    }
    g
}

fn pooled_shape(shape: &[usize], factor: usize) -> Result<Vec<usize>> {
    let Some((&f, _)) = shape.split_last() else {
        return Err(Error::shape("cannot pool a scalar"));
    };
    if factor == 0 || f % factor != 0 {
        return Err(Error::config(format!(
            "frequency extent {f} is not divisible by pool factor {factor}"
        )));
    }
    let mut s = shape.to_vec();
    *s.last_mut().expect("non-empty") = f / factor;
    Ok(s)
}

/// Argmax positions of a quaternion pool, one list per plane.
pub type PoolIndices = [Vec<usize>; 4];

pub fn max_pool_freq(input: &QuatTensor, factor: usize) -> Result<(QuatTensor, PoolIndices)> {
    let shape = pooled_shape(input.shape(), factor)?;
    let f = *input.shape().last().expect("checked");
    let mut planes: [Vec<f64>; 4] = Default::default();
    let mut idx: PoolIndices = Default::default();
    for k in 0..4 {
        let (v, i) = max_pool_rows(input.plane(k), f, factor)?;
        planes[k] = v;
        idx[k] = i;
    }
    Ok((QuatTensor::from_planes(&shape, planes)?, idx))
}

pub fn max_pool_freq_backward(grad_out: &QuatTensor, indices: &PoolIndices, input_shape: &[usize]) -> Result<QuatTensor> {
    let n: usize = input_shape.iter().product();
    let planes = std::array::from_fn(|k| max_pool_rows_backward(grad_out.plane(k), &indices[k], n));
    QuatTensor::from_planes(input_shape, planes)
}

pub fn max_pool_freq_real(input: &RealTensor, factor: usize) -> Result<(RealTensor, Vec<usize>)> {
    let shape = pooled_shape(input.shape(), factor)?;
    let f = *input.shape().last().expect("checked");
    let (v, i) = max_pool_rows(input.data(), f, factor)?;
    Ok((RealTensor::from_vec(&shape, v)?, i))
}

pub fn max_pool_freq_real_backward(grad_out: &RealTensor, indices: &[usize], input_shape: &[usize]) -> Result<RealTensor> {
    let n: usize = input_shape.iter().product();
    RealTensor::from_vec(input_shape, max_pool_rows_backward(grad_out.data(), indices, n))
}
