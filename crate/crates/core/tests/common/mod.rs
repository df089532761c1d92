#![allow(dead_code)]

use qseld_core::quat::{to_real_block, QuatTensor};
use qseld_core::qnn::QConv2d;
use qseld_core::synth::{Clip, Split, SynthConfig};

/// Same-padded 3×3 convolution evaluated as sixteen real convolutions: each
/// kernel tap `[P, C]` is expanded to its real block matrix `[4P, 4C]` and
/// applied to the stacked input planes.
pub fn block_conv(layer: &QConv2d, input: &QuatTensor) -> QuatTensor {
    let [b, c, t, f] = input.shape().try_into().unwrap();
    let p = layer.filters();
    let mut planes: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; b * p * t * f]);
    for kt in 0..3 {
        for kf in 0..3 {
            let mut tap = QuatTensor::zeros(&[p, c]);
            for o in 0..p {
                for i in 0..c {
                    tap.set(o * c + i, layer.kernels.at(&[o, i, kt, kf]));
                }
            }
            let m = to_real_block(&tap).unwrap();
            for bi in 0..b {
                for ti in 0..t {
                    for fi in 0..f {
                        let (st, sf) = (ti as isize + kt as isize - 1, fi as isize + kf as isize - 1);
                        if st < 0 || sf < 0 || st >= t as isize || sf >= f as isize {
                            continue;
                        }
                        let (st, sf) = (st as usize, sf as usize);
                        for a in 0..4 {
                            for o in 0..p {
                                let mut acc = 0.0;
                                for bb in 0..4 {
                                    for i in 0..c {
                                        let x = input.plane(bb)[((bi * c + i) * t + st) * f + sf];
                                        acc += m.get(a * p + o, bb * c + i) * x;
                                    }
                                }
                                planes[a][((bi * p + o) * t + ti) * f + fi] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    for bi in 0..b {
        for o in 0..p {
            let bias = layer.bias.get(o).to_array();
            for a in 0..4 {
                let s = ((bi * p + o) * t) * f;
                planes[a][s..s + t * f].iter_mut().for_each(|v| *v += bias[a]);
            }
        }
    }
    QuatTensor::from_planes(&[b, p, t, f], planes).unwrap()
}

pub fn small_synth(n_clips: usize, seed: u64) -> SynthConfig {
    SynthConfig { n_clips, seed, ..SynthConfig::default() }
}

pub fn train_clips(clips: &[Clip]) -> Vec<&Clip> {
    clips.iter().filter(|c| c.split == Split::Train).collect()
}

pub fn test_clips(clips: &[Clip]) -> Vec<&Clip> {
    clips.iter().filter(|c| c.split == Split::Test).collect()
}

pub struct InitMoments {
    pub sigma: f64,
    pub means: [f64; 4],
    pub skews: [f64; 4],
    pub max_axis_err: f64,
    pub second_moment: f64,
    pub max_abs_w: f64,
}

/// Sample moments of `draws` polar initializations with `n_i = fan_in`.
pub fn init_moments(draws: usize, fan_in: usize, seed: u64) -> InitMoments {
    use qseld_core::init::{draw_polar, rng_from_seed, sigma_he};
    let sigma = sigma_he(fan_in as i64).unwrap();
    let mut rng = rng_from_seed(seed);
    let mut comps: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(draws));
    let (mut max_axis_err, mut sq, mut max_abs_w) = (0.0f64, 0.0, 0.0f64);
    for _ in 0..draws {
        let d = draw_polar(sigma, &mut rng);
        let n = (d.axis[0].powi(2) + d.axis[1].powi(2) + d.axis[2].powi(2)).sqrt();
        max_axis_err = max_axis_err.max((n - 1.0).abs());
        sq += d.weight.norm_sqr();
        max_abs_w = max_abs_w.max(d.weight.w.abs());
        for (k, v) in d.weight.to_array().into_iter().enumerate() {
            comps[k].push(v);
        }
    }
    let n = draws as f64;
    let mut means = [0.0; 4];
    let mut skews = [0.0; 4];
    for k in 0..4 {
        let m = comps[k].iter().sum::<f64>() / n;
        let m2 = comps[k].iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m3 = comps[k].iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
        means[k] = m;
        skews[k] = m3 / m2.powf(1.5);
    }
    InitMoments { sigma, means, skews, max_axis_err, second_moment: sq / n, max_abs_w }
}

/// Least-squares fit of `(X, Y, Z) ≈ d·W` over the clip, scored on every grid
/// direction; returns the best `(azimuth, elevation)` in radians.
pub fn decode_direction(audio: &qseld_core::features::BFormat, grid: &qseld_core::synth::DirectionGrid) -> (f64, f64) {
    let [w, x, y, z] = audio;
    let ww: f64 = w.iter().map(|v| v * v).sum();
    let cross = [x, y, z].map(|c| c.iter().zip(w).map(|(a, b)| a * b).sum::<f64>());
    let energy: f64 = [x, y, z].iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum();
    grid.directions()
        .into_iter()
        .map(|(theta, phi)| {
            let d = qseld_core::synth::direction_vector(theta, phi);
            // Σ‖(X,Y,Z) − d·W‖² with ‖d‖ = 1
            let residual = energy - 2.0 * (d[0] * cross[0] + d[1] * cross[1] + d[2] * cross[2]) + ww;
            (residual, theta, phi)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, t, p)| (t, p))
        .unwrap()
}

pub fn energy_ratio(audio: &qseld_core::features::BFormat) -> f64 {
    let e = |c: &Vec<f64>| c.iter().map(|v| v * v).sum::<f64>();
    (e(&audio[1]) + e(&audio[2]) + e(&audio[3])) / e(&audio[0])
}
