use std::f64::consts::PI;

use proptest::prelude::*;
use qseld_core::features::{frame_count, hamming, stft_all_frames, stft_features, BFormat};
use qseld_core::init::rng_from_seed;
use rand::Rng;

const SR: u32 = 8000;

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn noise_bformat(len: usize, seed: u64) -> BFormat {
    std::array::from_fn(|c| noise(len, seed * 4 + c as u64))
}

/// Windowed DFT bin `k` of the frame starting at `start`, summed directly.
fn direct_bin(x: &[f64], start: usize, m: usize, k: usize) -> (f64, f64) {
    let w = hamming(m);
    let (mut re, mut im) = (0.0, 0.0);
    for n in 0..m {
        let a = -2.0 * PI * (k * n) as f64 / m as f64;
        let v = w[n] * x[start + n];
        re += v * a.cos();
        im += v * a.sin();
    }
    (re, im)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[test]
fn matches_direct_dft() {
    let m = 64;
    let audio = noise_bformat(1000, 1);
    let f = stft_all_frames(&audio, m, SR).unwrap();
    assert_eq!(f.frames, frame_count(1000, m));
    for ch in 0..4 {
        for t in [0, 7, f.frames - 1] {
            for k in 1..=m / 2 {
                let (re, im) = direct_bin(&audio[ch], t * m / 2, m, k);
                let mag = re.hypot(im);
                assert!((f.get(t, k - 1, ch) - mag).abs() < 1e-9 * mag.max(1.0));
                assert!(angle_diff(f.get(t, k - 1, 4 + ch), im.atan2(re)) < 1e-9);
            }
        }
    }
}

#[test]
fn bin_centered_sine_peaks_at_its_bin() {
    let m = 64;
    let freq = 8.0 * SR as f64 / m as f64;
    let sine: Vec<f64> = (0..2000).map(|n| (2.0 * PI * freq * n as f64 / SR as f64).sin()).collect();
    let zeros = vec![0.0; sine.len()];
    let f = stft_all_frames(&[sine.clone(), zeros.clone(), zeros.clone(), zeros], m, SR).unwrap();
    for t in 0..f.frames {
        let mags: Vec<f64> = (0..m / 2).map(|b| f.get(t, b, 0)).collect();
        let peak = (0..m / 2).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap() + 1;
        assert_eq!(peak, 8, "frame {t}");
        // outside the window's main lobe
        for k in (1..=m / 2).filter(|k| k.abs_diff(8) >= 2) {
            assert!(mags[7] >= 10.0 * mags[k - 1], "frame {t}, bin {k}");
        }
        // the main lobe neighbours follow the window transform
        let (re, im) = direct_bin(&sine, t * m / 2, m, 9);
        assert!((mags[8] - re.hypot(im)).abs() < 1e-9);
    }
}

#[test]
fn positive_bins_satisfy_parseval() {
    // Σ_{k=0}^{M-1} |X_k|² = M·E, and the spectrum of a real frame is
    // conjugate-symmetric, so Σ_{k=1}^{M/2} |X_k|² = (M·E − |X_0|² + |X_{M/2}|²)/2.
    for m in [64usize, 1024] {
        let audio = noise_bformat(4 * m, 7);
        let f = stft_all_frames(&audio, m, SR).unwrap();
        let w = hamming(m);
        for ch in 0..4 {
            for t in 0..f.frames {
                let seg = &audio[ch][t * m / 2..t * m / 2 + m];
                let energy: f64 = seg.iter().zip(&w).map(|(x, w)| (x * w).powi(2)).sum();
                let kept: f64 = (0..m / 2).map(|b| f.get(t, b, ch).powi(2)).sum();
                let (re0, im0) = direct_bin(&audio[ch], t * m / 2, m, 0);
                let nyq = f.get(t, m / 2 - 1, ch).powi(2);
                let exact = (m as f64 * energy - (re0 * re0 + im0 * im0) + nyq) / 2.0;
                assert!((kept - exact).abs() < 1e-9 * exact);
                if m == 1024 {
                    // convention constant M/2
                    let approx = m as f64 / 2.0 * energy;
                    assert!((kept - approx).abs() < 0.01 * approx, "{kept} vs {approx}");
                }
            }
        }
    }
}

#[test]
fn one_hop_delay_shifts_one_frame() {
    let m = 64;
    let x = noise_bformat(1200, 3);
    let delayed: BFormat = std::array::from_fn(|c| {
        let mut v = vec![0.0; m / 2];
        v.extend_from_slice(&x[c]);
        v
    });
    let a = stft_all_frames(&x, m, SR).unwrap();
    let b = stft_all_frames(&delayed, m, SR).unwrap();
    for t in 0..a.frames {
        for bin in 0..m / 2 {
            for p in 0..4 {
                assert!((a.get(t, bin, p) - b.get(t + 1, bin, p)).abs() < 1e-9);
            }
            for p in 4..8 {
                if a.get(t, bin, p - 4) > 1e-6 {
                    assert!(angle_diff(a.get(t, bin, p), b.get(t + 1, bin, p)) < 1e-9);
                }
            }
        }
    }
}

#[test]
fn identical_channels_give_identical_planes() {
    let x = noise(900, 5);
    let f = stft_all_frames(&[x.clone(), x, noise(900, 6), noise(900, 8)], 64, SR).unwrap();
    assert_eq!(f.planes[0], f.planes[1]);
    assert_eq!(f.planes[4], f.planes[5]);
}

#[test]
fn silence_has_zero_magnitude_and_phase() {
    let f = stft_features(&std::array::from_fn(|_| vec![0.0; 500]), 32, 40, SR).unwrap();
    assert!(f.planes.iter().all(|p| p.iter().all(|&v| v == 0.0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn output_shape_is_fixed(half in 8usize..40, extra in 0usize..300, frames in 1usize..30) {
        let m = 2 * half;
        let f = stft_features(&noise_bformat(m + extra, 0), m, frames, SR).unwrap();
        prop_assert_eq!(f.frames, frames);
        prop_assert_eq!(f.bins, m / 2);
        prop_assert!(f.planes.iter().all(|p| p.len() == frames * m / 2));
        prop_assert!(f.planes[..4].iter().flatten().all(|&v| v >= 0.0));
        prop_assert!(f.planes[4..].iter().flatten().all(|&v| v > -PI && v <= PI));
    }
}
