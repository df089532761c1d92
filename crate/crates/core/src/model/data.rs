//! Glue between datasets and the network: feature extraction, fixed-length
//! sequences, batching, whole-clip prediction and evaluation.

use rayon::prelude::*;

use super::{Batch, QseldModel, INPUT_CHANNELS};
use crate::error::{Error, Result};
use crate::features::{stft_all_frames, FeatureClip, FeatureStats};
use crate::metrics::{threshold, MetricReport, SeldAccumulator};
use crate::precision::Precision;
use crate::qnn::batchnorm::Mode;
use crate::quat::QuatTensor;
use crate::synth::{Clip, SeldLabels};

/// Default SED activity threshold.
pub const ACTIVITY_THRESHOLD: f64 = 0.5;

/// Features and labels of one clip on the same frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipData {
    pub id: String,
    pub features: FeatureClip,
    pub labels: SeldLabels,
}

pub fn extract(clip: &Clip, window: usize) -> Result<ClipData> {
    let features = stft_all_frames(&clip.audio, window, clip.sample_rate)?;
    if features.frames != clip.labels.frames {
        return Err(Error::Input(format!(
            "clip {} has {} label frames but {} feature frames for window {window}",
            clip.id, clip.labels.frames, features.frames
        )));
    }
    Ok(ClipData { id: clip.id.clone(), features, labels: clip.labels.clone() })
}

pub fn extract_all(clips: &[&Clip], window: usize) -> Result<Vec<ClipData>> {
    clips.par_iter().map(|c| extract(c, window)).collect()
}

/// Standardizes features in place and rounds them to the storage precision.
pub fn standardize(data: &mut [ClipData], stats: &FeatureStats, precision: Precision) {
    for d in data {
        stats.apply(&mut d.features);
        d.features.round(precision);
    }
}

/// A `T`-frame slice of a clip; the tail slice is zero-padded with inactive
/// labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub features: FeatureClip,
    pub labels: SeldLabels,
}

pub fn sequences(data: &[ClipData], frames: usize) -> Vec<Sequence> {
    let mut out = Vec::new();
    for d in data {
        let mut start = 0;
        while start < d.features.frames {
            out.push(Sequence {
                features: d.features.window_frames(start, frames),
                labels: d.labels.window_frames(start, frames),
            });
            start += frames;
        }
    }
    out
}

/// Stacks sequences of equal shape into a batch.
pub fn make_batch(seqs: &[&Sequence]) -> Result<Batch> {
    let first = seqs.first().ok_or_else(|| Error::Input("cannot build an empty batch".into()))?;
    let (t, f) = (first.features.frames, first.features.bins);
    let n = seqs.len() * INPUT_CHANNELS * t * f;
    let mut planes: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    let mut sed = Vec::new();
    let mut doa = Vec::new();
    for s in seqs {
        if (s.features.frames, s.features.bins) != (t, f) {
            return Err(Error::shape("sequences in a batch must share their shape"));
        }
        let q = s.features.to_quat_input();
        for (k, p) in planes.iter_mut().enumerate() {
            p.extend_from_slice(q.plane(k));
        }
        sed.extend(s.labels.activity_f64());
        doa.extend_from_slice(&s.labels.doa);
    }
    Ok(Batch { input: QuatTensor::from_planes(&[seqs.len(), INPUT_CHANNELS, t, f], planes)?, sed, doa })
}

/// Per-frame class probabilities `[T, N]` and DOA vectors `[T, N, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub frames: usize,
    pub classes: usize,
    pub probs: Vec<f64>,
    pub doa: Vec<f64>,
}

impl Prediction {
    pub fn activity(&self, level: f64) -> Vec<bool> {
        threshold(&self.probs, level)
    }
}

impl QseldModel {
    /// Eval-mode prediction for a clip of any length; the clip is cut into
    /// `T`-frame sequences and the outputs are stitched back together.
    pub fn predict(&self, features: &FeatureClip) -> Result<Prediction> {
        if features.bins != self.config.bins() || features.window != self.config.window {
            return Err(Error::shape(format!(
                "features have {} bins from window {}, model expects {} from window {}",
                features.bins,
                features.window,
                self.config.bins(),
                self.config.window
            )));
        }
        let t = self.config.frames;
        let n = self.config.classes;
        let chunks: Vec<Sequence> = (0..features.frames.div_ceil(t))
            .map(|i| Sequence {
                features: features.window_frames(i * t, t),
                labels: SeldLabels::empty(t, n),
            })
            .collect();
        let batch = make_batch(&chunks.iter().collect::<Vec<_>>())?;
        let (out, _) = self.forward(&batch.input, Mode::Eval)?;
        let frames = features.frames;
        Ok(Prediction {
            frames,
            classes: n,
            probs: out.sed.data()[..frames * n].to_vec(),
            doa: out.doa.data()[..frames * n * 3].to_vec(),
        })
    }
}

/// Segment length of one second in frames.
pub fn segment_frames(sample_rate: u32, window: usize) -> usize {
    ((f64::from(sample_rate) / (window / 2) as f64).round() as usize).max(1)
}

/// SELD metrics of `model` over `data`, pooled across clips.
pub fn evaluate(model: &QseldModel, data: &[ClipData], level: f64) -> Result<MetricReport> {
    let preds: Vec<Prediction> = data.par_iter().map(|d| model.predict(&d.features)).collect::<Result<_>>()?;
    let mut acc = SeldAccumulator::default();
    for (d, p) in data.iter().zip(&preds) {
        let seg = segment_frames(d.features.sample_rate, d.features.window);
        acc.add_clip(&p.activity(level), &d.labels.activity, &p.doa, &d.labels.doa, d.labels.classes, seg)?;
    }
    Ok(acc.report())
}

/// Scores the reference labels against themselves (pipeline sanity check).
pub fn evaluate_reference(data: &[ClipData]) -> Result<MetricReport> {
    let mut acc = SeldAccumulator::default();
    for d in data {
        let seg = segment_frames(d.features.sample_rate, d.features.window);
        let l = &d.labels;
        acc.add_clip(&l.activity, &l.activity, &l.doa, &l.doa, l.classes, seg)?;
    }
    Ok(acc.report())
}
