//! Plain row-major real tensors and conversions to/from quaternion planes.

use crate::error::{Error, Result};
use crate::quat::QuatTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        RealTensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape(format!(
                "{} values for shape {shape:?} ({n} expected)",
                data.len()
            )));
        }
        Ok(RealTensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.data.len() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.data.len() / self.shape[0];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn max_abs_diff(&self, other: &RealTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl QuatTensor {
    /// `[B, C, T, F]` quaternion maps to `[B, 4C, T, F]` real maps. Quaternion
    /// channel `c` component `k` becomes real map `4c + k`.
    pub fn to_real_maps(&self) -> Result<RealTensor> {
        let &[b, c, t, f] = self.shape() else {
            return Err(Error::shape(format!("expected [B, C, T, F], got {:?}", self.shape())));
        };
        let tf = t * f;
        let mut out = vec![0.0; 4 * self.len()];
        for bi in 0..b {
            for ci in 0..c {
                let src = (bi * c + ci) * tf;
                for k in 0..4 {
                    let dst = (bi * 4 * c + 4 * ci + k) * tf;
                    out[dst..dst + tf].copy_from_slice(&self.plane(k)[src..src + tf]);
                }
            }
        }
        RealTensor::from_vec(&[b, 4 * c, t, f], out)
    }

    /// Inverse of [`QuatTensor::to_real_maps`].
    pub fn from_real_maps(maps: &RealTensor) -> Result<QuatTensor> {
        let &[b, c4, t, f] = maps.shape() else {
            return Err(Error::shape(format!("expected [B, 4C, T, F], got {:?}", maps.shape())));
        };
        if c4 % 4 != 0 {
            return Err(Error::shape(format!("{c4} real maps is not a multiple of 4")));
        }
        let c = c4 / 4;
        let tf = t * f;
        let mut q = QuatTensor::zeros(&[b, c, t, f]);
        for bi in 0..b {
            for ci in 0..c {
                let dst = (bi * c + ci) * tf;
                for k in 0..4 {
                    let src = (bi * c4 + 4 * ci + k) * tf;
                    q.plane_mut(k)[dst..dst + tf].copy_from_slice(&maps.data()[src..src + tf]);
                }
            }
        }
        Ok(q)
    }
}

/// `[B, C, T, F]` real maps to per-frame feature rows `[B, T, C·F]`, feature
/// index `c·F + f`.
pub fn maps_to_frames(maps: &RealTensor) -> Result<RealTensor> {
    let &[b, c, t, f] = maps.shape() else {
        return Err(Error::shape(format!("expected [B, C, T, F], got {:?}", maps.shape())));
    };
    let mut out = vec![0.0; maps.len()];
    let src = maps.data();
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                let s = ((bi * c + ci) * t + ti) * f;
                let d = (bi * t + ti) * c * f + ci * f;
                out[d..d + f].copy_from_slice(&src[s..s + f]);
            }
        }
    }
    RealTensor::from_vec(&[b, t, c * f], out)
}

/// Inverse of [`maps_to_frames`].
pub fn frames_to_maps(frames: &RealTensor, channels: usize) -> Result<RealTensor> {
    let &[b, t, d] = frames.shape() else {
        return Err(Error::shape(format!("expected [B, T, D], got {:?}", frames.shape())));
    };
    if channels == 0 || d % channels != 0 {
        return Err(Error::shape(format!("{d} features do not split into {channels} maps")));
    }
    let f = d / channels;
    let mut out = vec![0.0; frames.len()];
    let src = frames.data();
    for bi in 0..b {
        for ci in 0..channels {
            for ti in 0..t {
                let s = (bi * t + ti) * d + ci * f;
                let dd = ((bi * channels + ci) * t + ti) * f;
                out[dd..dd + f].copy_from_slice(&src[s..s + f]);
            }
        }
    }
    RealTensor::from_vec(&[b, channels, t, f], out)
}
