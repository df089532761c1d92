//! STFT front end: magnitude and phase of the four B-format channels,
//! packed as two quaternion channels.
//!
//! Frames use a symmetric Hamming window `0.54 − 0.46·cos(2πn/(M−1))` and a
//! hop of `M/2`. The DFT convention is `X[k] = Σ_n w[n]·x[n]·e^{−2πikn/M}`
//! with no scaling; bins `1..=M/2` are kept.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::Precision;
use crate::quat::QuatTensor;

/// Four channels W, X, Y, Z of equal length.
pub type BFormat = [Vec<f64>; 4];

pub const PLANES: usize = 8;

/// Symmetric Hamming window of length `m`.
pub fn hamming(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    (0..m).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (m - 1) as f64).cos()).collect()
}

/// Number of full frames in `len` samples: `⌊(len − M)/hop⌋ + 1`, or 0 when
/// shorter than one window.
pub fn frame_count(len: usize, window: usize) -> usize {
    let hop = window / 2;
    if len < window || hop == 0 {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// `T × M/2 × 8` features. Planes are `|W|,|X|,|Y|,|Z|, ∠W,∠X,∠Y,∠Z`, each
/// stored as a `[T, M/2]` row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureClip {
    pub frames: usize,
    pub bins: usize,
    pub sample_rate: u32,
    pub window: usize,
    pub planes: [Vec<f64>; PLANES],
}

impl FeatureClip {
    pub fn zeros(frames: usize, bins: usize, sample_rate: u32, window: usize) -> Self {
        FeatureClip {
            frames,
            bins,
            sample_rate,
            window,
            planes: std::array::from_fn(|_| vec![0.0; frames * bins]),
        }
    }

    #[inline]
    pub fn get(&self, t: usize, bin: usize, plane: usize) -> f64 {
        self.planes[plane][t * self.bins + bin]
    }

    /// Frames `start..start+len`, zero-padded past the end.
    pub fn window_frames(&self, start: usize, len: usize) -> FeatureClip {
        let mut out = FeatureClip::zeros(len, self.bins, self.sample_rate, self.window);
        let avail = self.frames.saturating_sub(start).min(len);
        for (dst, src) in out.planes.iter_mut().zip(&self.planes) {
            dst[..avail * self.bins].copy_from_slice(&src[start * self.bins..(start + avail) * self.bins]);
        }
        out
    }

    /// Network input `[1, 2, T, M/2]`: channel 0 the magnitude quaternion,
    /// channel 1 the phase quaternion.
    pub fn to_quat_input(&self) -> QuatTensor {
        let n = self.frames * self.bins;
        let planes = std::array::from_fn(|k| {
            let mut v = Vec::with_capacity(2 * n);
            v.extend_from_slice(&self.planes[k]);
            v.extend_from_slice(&self.planes[4 + k]);
            v
        });
        QuatTensor::from_planes(&[1, 2, self.frames, self.bins], planes).expect("consistent feature shape")
    }

    pub fn round(&mut self, precision: Precision) {
        self.planes.iter_mut().for_each(|p| precision.round_slice(p));
    }
}

fn check_audio(audio: &BFormat, window: usize) -> Result<usize> {
    if window < 16 || !window.is_multiple_of(2) {
        return Err(Error::config(format!("window length must be even and at least 16, got {window}")));
    }
    let len = audio[0].len();
    if audio.iter().any(|c| c.len() != len) {
        return Err(Error::Input("B-format channels have different lengths".into()));
    }
    if len == 0 {
        return Err(Error::Input("audio is empty".into()));
    }
    if len < window {
        return Err(Error::Input(format!("audio has {len} samples, shorter than one {window}-sample window")));
    }
    if audio.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("audio contains non-finite samples".into()));
    }
    Ok(len)
}

/// Every full frame of `audio`.
pub fn stft_all_frames(audio: &BFormat, window: usize, sample_rate: u32) -> Result<FeatureClip> {
    let len = check_audio(audio, window)?;
    let frames = frame_count(len, window);
    let bins = window / 2;
    let hop = window / 2;
    let win = hamming(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut out = FeatureClip::zeros(frames, bins, sample_rate, window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for (ch, signal) in audio.iter().enumerate() {
        for t in 0..frames {
            let seg = &signal[t * hop..t * hop + window];
            for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&win) {
                *b = Complex::new(x * w, 0.0);
            }
            fft.process(&mut buf);
            for k in 0..bins {
                let c = buf[k + 1];
                let mag = c.norm();
                let mut phase = if mag == 0.0 { 0.0 } else { c.im.atan2(c.re) };
                if phase <= -PI {
                    phase = PI;
                }
                out.planes[ch][t * bins + k] = mag;
                out.planes[4 + ch][t * bins + k] = phase;
            }
        }
    }
    Ok(out)
}

/// Features truncated or zero-padded to exactly `frames` frames.
pub fn stft_features(audio: &BFormat, window: usize, frames: usize, sample_rate: u32) -> Result<FeatureClip> {
    Ok(stft_all_frames(audio, window, sample_rate)?.window_frames(0, frames))
}

/// Per-plane mean and standard deviation, estimated on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: [f64; PLANES],
    pub std: [f64; PLANES],
}

impl Default for FeatureStats {
    fn default() -> Self {
        FeatureStats { mean: [0.0; PLANES], std: [1.0; PLANES] }
    }
}

impl FeatureStats {
    pub fn fit<'a>(clips: impl IntoIterator<Item = &'a FeatureClip>) -> Result<FeatureStats> {
        let mut sum = [0.0; PLANES];
        let mut sq = [0.0; PLANES];
        let mut n = 0usize;
        for clip in clips {
            for p in 0..PLANES {
                sum[p] += clip.planes[p].iter().sum::<f64>();
                sq[p] += clip.planes[p].iter().map(|v| v * v).sum::<f64>();
            }
            n += clip.frames * clip.bins;
        }
        if n == 0 {
            return Err(Error::Input("cannot estimate feature statistics from no frames".into()));
        }
        let mut stats = FeatureStats::default();
        for p in 0..PLANES {
            let mean = sum[p] / n as f64;
            let var = (sq[p] / n as f64 - mean * mean).max(0.0);
            stats.mean[p] = mean;
            stats.std[p] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(stats)
    }

    pub fn apply(&self, clip: &mut FeatureClip) {
        for (p, plane) in clip.planes.iter_mut().enumerate() {
            plane.iter_mut().for_each(|v| *v = (*v - self.mean[p]) / self.std[p]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bformat(w: Vec<f64>) -> BFormat {
        let n = w.len();
        [w, vec![0.0; n], vec![0.0; n], vec![0.0; n]]
    }

    #[test]
    fn window_is_symmetric() {
        let w = hamming(64);
        assert!((w[0] - 0.08).abs() < 1e-15);
        for n in 0..64 {
            assert!((w[n] - w[63 - n]).abs() < 1e-15);
        }
    }

    #[test]
    fn frame_counting() {
        assert_eq!(frame_count(16000, 64), 499);
        assert_eq!(frame_count(64, 64), 1);
        assert_eq!(frame_count(63, 64), 0);
    }

    #[test]
    fn silence_gives_zero_planes() {
        let f = stft_features(&bformat(vec![0.0; 256]), 32, 10, 8000).unwrap();
        assert_eq!((f.frames, f.bins), (10, 16));
        assert!(f.planes.iter().all(|p| p.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn empty_and_short_audio_rejected() {
        assert!(stft_features(&bformat(vec![]), 32, 4, 8000).is_err());
        assert!(stft_features(&bformat(vec![0.1; 20]), 32, 4, 8000).is_err());
        assert!(stft_features(&bformat(vec![0.1; 64]), 15, 4, 8000).is_err());
    }

    #[test]
    fn padding_and_truncation() {
        let audio = bformat((0..256).map(|i| (i as f64 * 0.3).sin()).collect());
        let all = stft_all_frames(&audio, 32, 8000).unwrap();
        assert_eq!(all.frames, 15);
        let short = stft_features(&audio, 32, 4, 8000).unwrap();
        assert_eq!(short.planes[0], all.planes[0][..4 * 16]);
        let long = stft_features(&audio, 32, 20, 8000).unwrap();
        assert!(long.planes[0][15 * 16..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phases_in_half_open_range() {
        let audio = bformat((0..512).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect());
        let f = stft_all_frames(&audio, 32, 8000).unwrap();
        assert!(f.planes[4].iter().all(|&p| p > -PI && p <= PI));
        assert!(f.planes[0].iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn standardization_fits_training_planes() {
        let audio = bformat((0..512).map(|i| (i as f64 * 0.11).sin() + 0.2).collect());
        let mut f = stft_all_frames(&audio, 32, 8000).unwrap();
        let stats = FeatureStats::fit([&f]).unwrap();
        stats.apply(&mut f);
        let n = f.planes[0].len() as f64;
        let mean = f.planes[0].iter().sum::<f64>() / n;
        let var = f.planes[0].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
        // silent X plane keeps unit scale
        assert_eq!(stats.std[1], 1.0);
    }

    #[test]
    fn quat_input_layout() {
        let mut f = FeatureClip::zeros(2, 3, 8000, 6);
        f.planes[1][4] = 5.0;
        f.planes[6][0] = -1.0;
        let q = f.to_quat_input();
        assert_eq!(q.shape(), &[1, 2, 2, 3]);
        assert_eq!(q.at(&[0, 0, 1, 1]).x, 5.0);
        assert_eq!(q.at(&[0, 1, 0, 0]).y, -1.0);
    }
}
