//! Quaternion weight initialization.
//!
//! Each weight is drawn in polar form `φ·(cos θ + u sin θ)` with `u` a unit
//! pure quaternion, `θ ~ U[-π, π]` and magnitude scale `φ ~ U[-σ, σ]`, where
//! `σ = 1/√(2·n_i)` is the He criterion for `n_i` input neurons.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::quat::{QuatTensor, Quaternion};

/// Deterministic RNG used everywhere in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed for a named sub-task.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitSpec {
    /// Input neurons feeding one output unit (conv: channels × kh × kw).
    pub fan_in: usize,
    pub seed: u64,
}

pub fn sigma_he(fan_in: i64) -> Result<f64> {
    if fan_in <= 0 {
        return Err(Error::config(format!("fan-in must be positive, got {fan_in}")));
    }
    Ok(1.0 / (2.0 * fan_in as f64).sqrt())
}

/// A single draw, with the unit imaginary axis that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarDraw {
    pub weight: Quaternion,
    pub axis: [f64; 3],
    pub theta: f64,
    pub phi: f64,
}

pub fn draw_polar<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> PolarDraw {
    let axis = loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            break [v[0] / n, v[1] / n, v[2] / n];
        }
    };
    let theta = rng.random_range(-PI..=PI);
    let phi = if sigma > 0.0 { rng.random_range(-sigma..=sigma) } else { 0.0 };
    let s = phi * theta.sin();
    PolarDraw {
        weight: Quaternion::new(phi * theta.cos(), s * axis[0], s * axis[1], s * axis[2]),
        axis,
        theta,
        phi,
    }
}

pub fn init_quaternion_weight<R: Rng + ?Sized>(fan_in: usize, rng: &mut R) -> Result<Quaternion> {
    let sigma = sigma_he(fan_in as i64)?;
    Ok(draw_polar(sigma, rng).weight)
}

/// Initialize a whole tensor from an [`InitSpec`]; the same spec always gives
/// the same tensor.
pub fn init_quaternion_tensor(shape: &[usize], spec: InitSpec) -> Result<QuatTensor> {
    let sigma = sigma_he(spec.fan_in as i64)?;
    let mut rng = rng_from_seed(spec.seed);
    let mut t = QuatTensor::zeros(shape);
    for i in 0..t.len() {
        t.set(i, draw_polar(sigma, &mut rng).weight);
    }
    Ok(t)
}

/// Uniform `[-1/√fan_in, 1/√fan_in]` for the real-valued layers.
pub fn init_real_uniform(len: usize, fan_in: usize, seed: u64) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let mut rng = rng_from_seed(seed);
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}
