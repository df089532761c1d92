//! Synthetic first-order ambisonic dataset: parametric mono events encoded
//! at grid directions, with frame-level activity and DOA labels.
//!
//! Event boundaries are snapped to multiples of the hop `M/2`. A frame is
//! labelled active for an event when its analysis window overlaps the event
//! support, so frames labelled silent contain no event samples at all.

mod dataset;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{frame_count, BFormat};
use crate::init::{derive_seed, rng_from_seed, SeededRng};

pub use dataset::{load_dataset, load_dataset_with_window, read_labels, read_wav, write_dataset, Dataset, DatasetMeta};

/// First-order gains `(W, X, Y, Z)` for azimuth `theta` and elevation `phi`,
/// SN3D-style with unit W.
pub fn bformat_gains(theta: f64, phi: f64) -> [f64; 4] {
    [1.0, theta.cos() * phi.cos(), theta.sin() * phi.cos(), phi.sin()]
}

pub fn encode_bformat(s: &[f64], theta: f64, phi: f64) -> BFormat {
    let g = bformat_gains(theta, phi);
    std::array::from_fn(|k| s.iter().map(|v| v * g[k]).collect())
}

/// Unit Cartesian direction for `(theta, phi)`.
pub fn direction_vector(theta: f64, phi: f64) -> [f64; 3] {
    [theta.cos() * phi.cos(), theta.sin() * phi.cos(), phi.sin()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionGrid {
    pub step_deg: i32,
    pub elevation_min_deg: i32,
    pub elevation_max_deg: i32,
}

impl Default for DirectionGrid {
    fn default() -> Self {
        DirectionGrid { step_deg: 10, elevation_min_deg: -60, elevation_max_deg: 60 }
    }
}

impl DirectionGrid {
    /// Azimuths in `[−180°, 180°)`, in degrees.
    pub fn azimuths(&self) -> Vec<i32> {
        (-180..180).step_by(self.step_deg as usize).collect()
    }

    pub fn elevations(&self) -> Vec<i32> {
        (self.elevation_min_deg..=self.elevation_max_deg).step_by(self.step_deg as usize).collect()
    }

    /// Every grid direction as `(theta, phi)` in radians.
    pub fn directions(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for e in self.elevations() {
            for a in self.azimuths() {
                out.push((f64::from(a).to_radians(), f64::from(e).to_radians()));
            }
        }
        out
    }

    pub fn contains(&self, theta: f64, phi: f64) -> bool {
        let on = |rad: f64, allowed: &[i32]| allowed.iter().any(|&d| (f64::from(d).to_radians() - rad).abs() < 1e-9);
        on(theta, &self.azimuths()) && on(phi, &self.elevations())
    }

    fn validate(&self) -> Result<()> {
        if self.step_deg <= 0 || 360 % self.step_deg != 0 {
            return Err(Error::config(format!("grid step must divide 360 degrees, got {}", self.step_deg)));
        }
        if self.elevation_min_deg < -90 || self.elevation_max_deg > 90 || self.elevation_min_deg > self.elevation_max_deg {
            return Err(Error::config("grid elevation range must lie within [-90, 90] degrees"));
        }
        Ok(())
    }
}

/// Sound of one class. Every event is normalized to unit RMS before gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Timbre {
    /// Harmonics of `f0` with the given amplitudes.
    ToneComplex { f0: f64, amplitudes: Vec<f64> },
    /// Linear sweep across the event.
    Chirp { f_start: f64, f_end: f64 },
    /// White noise through a two-pole resonator.
    NoiseBurst { center: f64, pole_radius: f64 },
}

impl Timbre {
    /// Deterministic family keyed by class: tone complexes, chirps and noise
    /// bursts in turn, moving up in frequency with the class index.
    pub fn for_class(class_id: usize, sample_rate: u32) -> Timbre {
        let nyq = f64::from(sample_rate) / 2.0;
        let k = (class_id / 3) as f64;
        match class_id % 3 {
            0 => {
                let f0 = nyq * 0.06 * (1.0 + 0.5 * k);
                let amplitudes = (1..=5)
                    .map(|h| if f0 * (h as f64) < 0.9 * nyq { 1.0 / h as f64 } else { 0.0 })
                    .collect();
                Timbre::ToneComplex { f0, amplitudes }
            }
            1 => Timbre::Chirp {
                f_start: nyq * (0.15 + 0.04 * k).min(0.8),
                f_end: nyq * (0.45 + 0.04 * k).min(0.9),
            },
            _ => Timbre::NoiseBurst { center: nyq * (0.65 + 0.03 * k).min(0.9), pole_radius: 0.95 },
        }
    }

    /// `len` samples at unit RMS.
    pub fn render(&self, len: usize, sample_rate: u32, rng: &mut SeededRng) -> Vec<f64> {
        let sr = f64::from(sample_rate);
        let mut s: Vec<f64> = match self {
            Timbre::ToneComplex { f0, amplitudes } => {
                let phases: Vec<f64> = amplitudes.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                (0..len)
                    .map(|n| {
                        let t = n as f64 / sr;
                        amplitudes
                            .iter()
                            .zip(&phases)
                            .enumerate()
                            .map(|(h, (a, p))| a * (2.0 * PI * f0 * (h + 1) as f64 * t + p).sin())
                            .sum()
                    })
                    .collect()
            }
            Timbre::Chirp { f_start, f_end } => {
                let dur = len as f64 / sr;
                let rate = (f_end - f_start) / dur.max(1e-12);
                (0..len)
                    .map(|n| {
                        let t = n as f64 / sr;
                        (2.0 * PI * (f_start * t + 0.5 * rate * t * t)).sin()
                    })
                    .collect()
            }
            Timbre::NoiseBurst { center, pole_radius } => {
                let w = 2.0 * PI * center / sr;
                let (a1, a2) = (2.0 * pole_radius * w.cos(), -pole_radius * pole_radius);
                let (mut y1, mut y2) = (0.0, 0.0);
                (0..len)
                    .map(|_| {
                        let x: f64 = StandardNormal.sample(rng);
                        let y = x + a1 * y1 + a2 * y2;
                        y2 = y1;
                        y1 = y;
                        y
                    })
                    .collect()
            }
        };
        let rms = (s.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
        if rms > 0.0 {
            s.iter_mut().for_each(|v| *v /= rms);
        }
        s
    }
}

/// One event. Times are in seconds and lie on hop boundaries; angles are in
/// radians on the direction grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub class_id: usize,
    pub onset: f64,
    pub offset: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub amplitude: f64,
}

impl EventSpec {
    /// Sample range `[start, end)` of the event.
    pub fn samples(&self, sample_rate: u32) -> (usize, usize) {
        let sr = f64::from(sample_rate);
        ((self.onset * sr).round() as usize, (self.offset * sr).round() as usize)
    }

    /// Frames whose window overlaps the event, as an inclusive range.
    pub fn frames(&self, sample_rate: u32, window: usize, frames: usize) -> Option<(usize, usize)> {
        let (start, end) = self.samples(sample_rate);
        let hop = window / 2;
        // t·hop < end  and  t·hop + window > start
        let first = (start + 1).saturating_sub(window).div_ceil(hop);
        let last = (end - 1) / hop;
        let last = last.min(frames.checked_sub(1)?);
        (first <= last).then_some((first, last))
    }
}

/// Per-frame activity `[T, N]` and unit DOA vectors `[T, N, 3]`, zero where
/// inactive.
#[derive(Debug, Clone, PartialEq)]
pub struct SeldLabels {
    pub frames: usize,
    pub classes: usize,
    pub activity: Vec<bool>,
    pub doa: Vec<f64>,
}

impl SeldLabels {
    pub fn empty(frames: usize, classes: usize) -> Self {
        SeldLabels {
            frames,
            classes,
            activity: vec![false; frames * classes],
            doa: vec![0.0; frames * classes * 3],
        }
    }

    pub fn from_events(events: &[EventSpec], frames: usize, classes: usize, sample_rate: u32, window: usize) -> Self {
        let mut labels = SeldLabels::empty(frames, classes);
        for ev in events {
            if let Some((a, b)) = ev.frames(sample_rate, window, frames) {
                let d = direction_vector(ev.azimuth, ev.elevation);
                for t in a..=b {
                    let i = t * classes + ev.class_id;
                    labels.activity[i] = true;
                    labels.doa[3 * i..3 * i + 3].copy_from_slice(&d);
                }
            }
        }
        labels
    }

    pub fn is_active(&self, frame: usize, class: usize) -> bool {
        self.activity[frame * self.classes + class]
    }

    pub fn active_count(&self, frame: usize) -> usize {
        self.activity[frame * self.classes..(frame + 1) * self.classes].iter().filter(|&&a| a).count()
    }

    pub fn activity_f64(&self) -> Vec<f64> {
        self.activity.iter().map(|&a| f64::from(u8::from(a))).collect()
    }

    /// Frames `start..start+len`, inactive past the end.
    pub fn window_frames(&self, start: usize, len: usize) -> SeldLabels {
        let mut out = SeldLabels::empty(len, self.classes);
        let avail = self.frames.saturating_sub(start).min(len);
        let n = self.classes;
        out.activity[..avail * n].copy_from_slice(&self.activity[start * n..(start + avail) * n]);
        out.doa[..avail * n * 3].copy_from_slice(&self.doa[start * n * 3..(start + avail) * n * 3]);
        out
    }

    /// Unit norm where active, exactly zero where inactive.
    pub fn check(&self) -> std::result::Result<(), String> {
        for (i, &a) in self.activity.iter().enumerate() {
            let v = &self.doa[3 * i..3 * i + 3];
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let (t, c) = (i / self.classes, i % self.classes);
            if a && (norm - 1.0).abs() > 1e-6 {
                return Err(format!("frame {t} class {c} is active but its DOA has norm {norm}"));
            }
            if !a && norm != 0.0 {
                return Err(format!("frame {t} class {c} is inactive but has a non-zero DOA"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub classes: usize,
    /// Maximum number of simultaneously active events.
    pub overlap: usize,
    pub events_per_clip: usize,
    pub min_event_seconds: f64,
    pub max_event_seconds: f64,
    pub min_amplitude: f64,
    pub max_amplitude: f64,
    /// Analysis window `M`; labels are produced on its frame grid.
    pub window: usize,
    pub test_fraction: f64,
    pub grid: DirectionGrid,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clips: 20,
            clip_seconds: 2.0,
            sample_rate: 8000,
            classes: 3,
            overlap: 1,
            events_per_clip: 3,
            min_event_seconds: 0.25,
            max_event_seconds: 0.5,
            min_amplitude: 0.2,
            max_amplitude: 0.5,
            window: 64,
            test_fraction: 0.2,
            grid: DirectionGrid::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn hop(&self) -> usize {
        self.window / 2
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * f64::from(self.sample_rate)).round() as usize
    }

    pub fn frames(&self) -> usize {
        frame_count(self.clip_samples(), self.window)
    }

    fn event_hops(&self) -> (usize, usize) {
        let hop_s = self.hop() as f64 / f64::from(self.sample_rate);
        let lo = (self.min_event_seconds / hop_s).round().max(1.0) as usize;
        let hi = (self.max_event_seconds / hop_s).round().max(lo as f64) as usize;
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clips == 0 {
            return Err(Error::config("n_clips must be at least 1"));
        }
        if self.classes == 0 {
            return Err(Error::config("classes must be at least 1"));
        }
        if !(1..=3).contains(&self.overlap) {
            return Err(Error::config(format!("overlap must be 1, 2 or 3, got {}", self.overlap)));
        }
        if self.overlap > self.classes {
            return Err(Error::config(format!(
                "overlap {} needs at least as many classes, got {}",
                self.overlap, self.classes
            )));
        }
        if self.sample_rate == 0 || !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return Err(Error::config("sample_rate and clip_seconds must be positive"));
        }
        if self.window < 16 || !self.window.is_multiple_of(2) {
            return Err(Error::config(format!("window must be even and at least 16, got {}", self.window)));
        }
        if self.frames() == 0 {
            return Err(Error::config("clip is shorter than one analysis window"));
        }
        if !(self.min_event_seconds > 0.0 && self.min_event_seconds <= self.max_event_seconds) {
            return Err(Error::config("event durations must satisfy 0 < min_event_seconds <= max_event_seconds"));
        }
        if !(self.min_amplitude > 0.0 && self.min_amplitude <= self.max_amplitude && self.max_amplitude.is_finite()) {
            return Err(Error::config("amplitudes must satisfy 0 < min_amplitude <= max_amplitude"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config(format!("test_fraction must be in [0, 1), got {}", self.test_fraction)));
        }
        self.grid.validate()?;
        // Each event occupies at least min_hops + 1 frames (its frames plus the
        // guard frame); at most `overlap` events can share a frame.
        let (lo, _) = self.event_hops();
        let hops = self.clip_samples() / self.hop();
        if self.events_per_clip * (lo + 1) > self.overlap * hops {
            return Err(Error::config(format!(
                "impossible packing: {} events of at least {:.3} s do not fit in a {:.3} s clip with overlap {}",
                self.events_per_clip, self.min_event_seconds, self.clip_seconds, self.overlap
            )));
        }
        Ok(())
    }

    pub fn timbres(&self) -> Vec<Timbre> {
        (0..self.classes).map(|c| Timbre::for_class(c, self.sample_rate)).collect()
    }

    /// Clip ids and splits; the last `round(n·test_fraction)` clips are test.
    pub fn clip_plan(&self) -> Vec<(String, Split)> {
        let mut n_test = (self.n_clips as f64 * self.test_fraction).round() as usize;
        if self.test_fraction > 0.0 && self.n_clips >= 2 {
            n_test = n_test.clamp(1, self.n_clips - 1);
        }
        (0..self.n_clips)
            .map(|i| (format!("clip_{i:04}"), if i + n_test >= self.n_clips { Split::Test } else { Split::Train }))
            .collect()
    }
}

/// One synthesized clip held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub split: Split,
    pub sample_rate: u32,
    pub audio: BFormat,
    pub events: Vec<EventSpec>,
    pub labels: SeldLabels,
}

const PLACEMENT_ATTEMPTS: usize = 2000;

fn place_events(cfg: &SynthConfig, rng: &mut SeededRng, clip_id: &str) -> Result<Vec<EventSpec>> {
    let hop = cfg.hop();
    let sr = f64::from(cfg.sample_rate);
    let total_hops = cfg.clip_samples() / hop;
    let frames = cfg.frames();
    let (lo, hi) = cfg.event_hops();
    let directions = cfg.grid.directions();
    // frame occupancy per class
    let mut occupied = vec![false; frames * cfg.classes];
    let mut events = Vec::with_capacity(cfg.events_per_clip);
    for k in 0..cfg.events_per_clip {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let class_id = rng.random_range(0..cfg.classes);
            let dur = rng.random_range(lo..=hi).min(total_hops);
            let start = rng.random_range(0..=total_hops - dur);
            let ev = EventSpec {
                class_id,
                onset: (start * hop) as f64 / sr,
                offset: ((start + dur) * hop) as f64 / sr,
                azimuth: 0.0,
                elevation: 0.0,
                amplitude: 0.0,
            };
            let Some((a, b)) = ev.frames(cfg.sample_rate, cfg.window, frames) else { continue };
            let fits = (a..=b).all(|t| {
                let row = &occupied[t * cfg.classes..(t + 1) * cfg.classes];
                !row[class_id] && row.iter().filter(|&&o| o).count() < cfg.overlap
            });
            // keep a silent guard frame before and after the event
            let guard = |t: Option<usize>| t.is_none_or(|t| t >= frames || !occupied[t * cfg.classes + class_id]);
            if fits && guard(a.checked_sub(1)) && guard(Some(b + 1)) {
                placed = Some((ev, a, b));
                break;
            }
        }
        let Some((mut ev, a, b)) = placed else {
            return Err(Error::config(format!(
                "impossible packing: could not place event {k} of {clip_id} with overlap {}",
                cfg.overlap
            )));
        };
        let (theta, phi) = directions[rng.random_range(0..directions.len())];
        ev.azimuth = theta;
        ev.elevation = phi;
        ev.amplitude = rng.random_range(cfg.min_amplitude..=cfg.max_amplitude);
        for t in a..=b {
            occupied[t * cfg.classes + ev.class_id] = true;
        }
        events.push(ev);
    }
    events.sort_by(|x, y| x.onset.total_cmp(&y.onset).then(x.class_id.cmp(&y.class_id)));
    Ok(events)
}

/// Raised-cosine fade in and out over `fade` samples.
fn apply_fade(s: &mut [f64], fade: usize) {
    let n = s.len();
    let fade = fade.min(n / 2);
    for i in 0..fade {
        let g = 0.5 - 0.5 * (PI * (i as f64 + 0.5) / fade as f64).cos();
        s[i] *= g;
        s[n - 1 - i] *= g;
    }
}

/// Renders and mixes the events of one clip.
pub fn render_clip(cfg: &SynthConfig, events: &[EventSpec], seed: u64) -> BFormat {
    let len = cfg.clip_samples();
    let timbres = cfg.timbres();
    let mut audio: BFormat = std::array::from_fn(|_| vec![0.0; len]);
    for (k, ev) in events.iter().enumerate() {
        let (start, end) = ev.samples(cfg.sample_rate);
        let mut rng = rng_from_seed(derive_seed(seed, 1000 + k as u64));
        let mut s = timbres[ev.class_id].render(end - start, cfg.sample_rate, &mut rng);
        apply_fade(&mut s, cfg.hop());
        s.iter_mut().for_each(|v| *v *= ev.amplitude);
        let enc = encode_bformat(&s, ev.azimuth, ev.elevation);
        for (dst, src) in audio.iter_mut().zip(&enc) {
            for (d, v) in dst[start..end].iter_mut().zip(src) {
                *d += v;
            }
        }
    }
    audio
}

/// Synthesizes every clip of the dataset in memory.
pub fn synth_clips(cfg: &SynthConfig) -> Result<Vec<Clip>> {
    cfg.validate()?;
    cfg.clip_plan()
        .into_par_iter()
        .enumerate()
        .map(|(i, (id, split))| {
            let clip_seed = derive_seed(cfg.seed, i as u64);
            let mut rng = rng_from_seed(clip_seed);
            let events = place_events(cfg, &mut rng, &id)?;
            let audio = render_clip(cfg, &events, clip_seed);
            let labels = SeldLabels::from_events(&events, cfg.frames(), cfg.classes, cfg.sample_rate, cfg.window);
            Ok(Clip { id, split, sample_rate: cfg.sample_rate, audio, events, labels })
        })
        .collect()
}

/// Synthesizes the dataset and writes it under `dir`.
pub fn synth_dataset(cfg: &SynthConfig, dir: &std::path::Path) -> Result<DatasetMeta> {
    let clips = synth_clips(cfg)?;
    write_dataset(cfg, &clips, dir)
}
