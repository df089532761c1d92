//! SELD evaluation: segment-based error rate and F-score, class-aligned DOA
//! error, frame recall, and the joint SED/DOA/SELD scores.
//!
//! Activity matrices are row-major `[T, N]` booleans; DOA arrays are
//! `[T, N, 3]` Cartesian vectors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// DOA error reported when no (frame, class) pair is active in both the
/// prediction and the reference.
pub const NO_MATCH_DOA_ERR: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub er: f64,
    pub f: f64,
    /// Degrees.
    pub doa_err: f64,
    pub k: f64,
    pub s_sed: f64,
    pub s_doa: f64,
    pub s_seld: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "ER,F,DOA_err,K,S_SED,S_DOA,S_SELD";

    pub fn from_parts(er: f64, f: f64, doa_err: f64, k: f64) -> Self {
        let (s_sed, s_doa, s_seld) = seld_scores(er, f, doa_err, k);
        MetricReport { er, f, doa_err, k, s_sed, s_doa, s_seld }
    }

    pub fn values(&self) -> [f64; 7] {
        [self.er, self.f, self.doa_err, self.k, self.s_sed, self.s_doa, self.s_seld]
    }

    pub fn csv_row(&self) -> String {
        self.values().iter().map(|v| format!("{v:.9}")).collect::<Vec<_>>().join(",")
    }

    /// One `key = value` line per metric.
    pub fn to_text(&self) -> String {
        let keys = ["ER", "F", "DOA_err", "K", "S_SED", "S_DOA", "S_SELD"];
        keys.iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k} = {v:.9}\n"))
            .collect()
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ER={:.4} F={:.4} DOA_err={:.2} K={:.4} S_SED={:.4} S_DOA={:.4} S_SELD={:.4}",
            self.er, self.f, self.doa_err, self.k, self.s_sed, self.s_doa, self.s_seld
        )
    }
}

pub fn seld_scores(er: f64, f: f64, doa_err: f64, k: f64) -> (f64, f64, f64) {
    let s_sed = (er + (1.0 - f)) / 2.0;
    let s_doa = (doa_err / 180.0 + (1.0 - k)) / 2.0;
    (s_sed, s_doa, (s_sed + s_doa) / 2.0)
}

/// Segment-level detection counts, summable across clips.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SedCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference: usize,
}

impl SedCounts {
    pub fn add(&mut self, o: &SedCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.reference += o.reference;
    }

    /// `(ER, F)`. With no reference events F is 1 when nothing was predicted
    /// (0/0 guard) and ER is 0, or `+∞` if anything was inserted.
    pub fn scores(&self) -> (f64, f64) {
        let f_den = 2 * self.tp + self.fp + self.fn_;
        let f = if f_den == 0 { 1.0 } else { 2.0 * self.tp as f64 / f_den as f64 };
        let errors = self.substitutions + self.deletions + self.insertions;
        let er = if self.reference == 0 {
            if errors == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            errors as f64 / self.reference as f64
        };
        (er, f)
    }
}

fn check_activity(pred: &[bool], gt: &[bool], classes: usize) -> Result<usize> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "prediction has {} activity entries, reference has {}",
            pred.len(),
            gt.len()
        )));
    }
    if classes == 0 || !gt.len().is_multiple_of(classes) {
        return Err(Error::shape(format!("{} entries do not form rows of {classes} classes", gt.len())));
    }
    Ok(gt.len() / classes)
}

pub fn sed_counts(pred: &[bool], gt: &[bool], classes: usize, segment_frames: usize) -> Result<SedCounts> {
    let frames = check_activity(pred, gt, classes)?;
    if segment_frames == 0 {
        return Err(Error::config("segment length must be at least one frame"));
    }
    let mut counts = SedCounts::default();
    let mut start = 0;
    while start < frames {
        let end = (start + segment_frames).min(frames);
        let (mut tp, mut fp, mut fn_, mut nref) = (0, 0, 0, 0);
        for c in 0..classes {
            let present = |a: &[bool]| (start..end).any(|t| a[t * classes + c]);
            match (present(pred), present(gt)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
            if present(gt) {
                nref += 1;
            }
        }
        counts.tp += tp;
        counts.fp += fp;
        counts.fn_ += fn_;
        counts.substitutions += fn_.min(fp);
        counts.deletions += fn_.saturating_sub(fp);
        counts.insertions += fp.saturating_sub(fn_);
        counts.reference += nref;
        start = end;
    }
    Ok(counts)
}

/// Segment-based `(ER, F)`; a class is present in a segment when any of its
/// frames is active.
pub fn segment_sed_metrics(pred: &[bool], gt: &[bool], classes: usize, segment_frames: usize) -> Result<(f64, f64)> {
    Ok(sed_counts(pred, gt, classes, segment_frames)?.scores())
}

/// DOA error and frame-recall accumulators, summable across clips.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoaCounts {
    pub angle_sum: f64,
    pub pairs: usize,
    pub count_matches: usize,
    pub frames: usize,
}

impl DoaCounts {
    pub fn add(&mut self, o: &DoaCounts) {
        self.angle_sum += o.angle_sum;
        self.pairs += o.pairs;
        self.count_matches += o.count_matches;
        self.frames += o.frames;
    }

    /// `(DOA_err in degrees, K)`.
    pub fn scores(&self) -> (f64, f64) {
        let doa = if self.pairs == 0 { NO_MATCH_DOA_ERR } else { self.angle_sum / self.pairs as f64 };
        let k = if self.frames == 0 { 1.0 } else { self.count_matches as f64 / self.frames as f64 };
        (doa, k)
    }
}

/// Angle in degrees between two vectors; `None` if either is zero.
pub fn angle_degrees(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Some(cos.clamp(-1.0, 1.0).acos().to_degrees())
}

pub fn doa_counts(
    pred_doa: &[f64],
    gt_doa: &[f64],
    pred_activity: &[bool],
    gt_activity: &[bool],
    classes: usize,
) -> Result<DoaCounts> {
    let frames = check_activity(pred_activity, gt_activity, classes)?;
    if pred_doa.len() != 3 * gt_activity.len() || gt_doa.len() != pred_doa.len() {
        return Err(Error::shape(format!(
            "DOA arrays must hold {} values, got {} and {}",
            3 * gt_activity.len(),
            pred_doa.len(),
            gt_doa.len()
        )));
    }
    let mut counts = DoaCounts { frames, ..Default::default() };
    for t in 0..frames {
        let mut np = 0;
        let mut ng = 0;
        for c in 0..classes {
            let i = t * classes + c;
            np += pred_activity[i] as usize;
            ng += gt_activity[i] as usize;
            if pred_activity[i] && gt_activity[i] {
                if let Some(a) = angle_degrees(&pred_doa[3 * i..3 * i + 3], &gt_doa[3 * i..3 * i + 3]) {
                    counts.angle_sum += a;
                    counts.pairs += 1;
                }
            }
        }
        if np == ng {
            counts.count_matches += 1;
        }
    }
    Ok(counts)
}

/// Class-aligned DOA error (mean angle over pairs active in both prediction
/// and reference) and frame recall K (fraction of frames whose predicted
/// active-class count equals the reference count).
pub fn doa_metrics(
    pred_doa: &[f64],
    gt_doa: &[f64],
    pred_activity: &[bool],
    gt_activity: &[bool],
    classes: usize,
) -> Result<(f64, f64)> {
    Ok(doa_counts(pred_doa, gt_doa, pred_activity, gt_activity, classes)?.scores())
}

/// Running evaluation over many clips.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SeldAccumulator {
    pub sed: SedCounts,
    pub doa: DoaCounts,
}

impl SeldAccumulator {
    #[allow(clippy::too_many_arguments)]
    pub fn add_clip(
        &mut self,
        pred_activity: &[bool],
        gt_activity: &[bool],
        pred_doa: &[f64],
        gt_doa: &[f64],
        classes: usize,
        segment_frames: usize,
    ) -> Result<()> {
        self.sed.add(&sed_counts(pred_activity, gt_activity, classes, segment_frames)?);
        self.doa.add(&doa_counts(pred_doa, gt_doa, pred_activity, gt_activity, classes)?);
        Ok(())
    }

    pub fn report(&self) -> MetricReport {
        let (er, f) = self.sed.scores();
        let (doa, k) = self.doa.scores();
        MetricReport::from_parts(er, f, doa, k)
    }
}

/// Threshold sigmoid outputs into activity.
pub fn threshold(probs: &[f64], level: f64) -> Vec<bool> {
    probs.iter().map(|&p| p > level).collect()
}
