//! On-disk dataset layout:
//!
//! ```text
//! meta.json            manifest
//! clips/<id>.wav       4-channel W, X, Y, Z audio (float32 or PCM16 on read)
//! labels/<id>.csv      frame,class,active,x,y,z — one row per (frame, class)
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Clip, EventSpec, SeldLabels, Split, SynthConfig, Timbre};
use crate::error::{Error, Result};
use crate::features::{frame_count, BFormat};
use crate::synth::DirectionGrid;

pub const DATASET_FORMAT: &str = "qseld-dataset";
pub const DATASET_VERSION: u32 = 1;
const LABEL_HEADER: [&str; 6] = ["frame", "class", "active", "x", "y", "z"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub id: String,
    pub split: Split,
    pub events: Vec<EventSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    /// Channel gain convention.
    pub normalization: String,
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub clip_samples: usize,
    pub frames: usize,
    pub classes: usize,
    pub overlap: usize,
    pub seed: u64,
    pub grid: DirectionGrid,
    pub timbres: Vec<Timbre>,
    pub config: SynthConfig,
    pub clips: Vec<ClipMeta>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Clip> {
        self.clips.iter().filter(|c| c.split == split).collect()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn dataset_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Dataset { path: path.to_path_buf(), msg: msg.into() }
}

fn write_wav(path: &Path, audio: &BFormat, sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 4,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for n in 0..audio[0].len() {
        for ch in audio {
            w.write_sample(ch[n] as f32).map_err(wav_err)?;
        }
    }
    w.finalize().map_err(wav_err)
}

/// Reads a 4-channel WAV, float32 or PCM16.
pub fn read_wav(path: &Path) -> Result<(BFormat, u32)> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 4 {
        return Err(dataset_err(path, format!("expected 4 channels (W, X, Y, Z), found {}", spec.channels)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(dataset_err(path, format!("unsupported sample format {fmt:?} with {bits} bits")));
        }
    };
    if !samples.len().is_multiple_of(4) {
        return Err(dataset_err(path, "truncated audio: incomplete final frame"));
    }
    let n = samples.len() / 4;
    let audio = std::array::from_fn(|ch| (0..n).map(|i| samples[4 * i + ch]).collect());
    Ok((audio, spec.sample_rate))
}

fn write_labels(path: &Path, labels: &SeldLabels) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| dataset_err(path, e.to_string()))?;
    let csv_err = |e: csv::Error| dataset_err(path, e.to_string());
    w.write_record(LABEL_HEADER).map_err(csv_err)?;
    for t in 0..labels.frames {
        for c in 0..labels.classes {
            let i = t * labels.classes + c;
            let d = &labels.doa[3 * i..3 * i + 3];
            w.write_record([
                t.to_string(),
                c.to_string(),
                u8::from(labels.activity[i]).to_string(),
                format!("{:.16e}", d[0]),
                format!("{:.16e}", d[1]),
                format!("{:.16e}", d[2]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads a label table with `frames × classes` rows. Errors name the file
/// and the line.
pub fn read_labels(path: &Path, frames: usize, classes: usize) -> Result<SeldLabels> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| dataset_err(path, e.to_string()))?;
    let header = r.headers().map_err(|e| Error::Parse { path: path.into(), line: 1, msg: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != LABEL_HEADER {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("header must be {}", LABEL_HEADER.join(",")),
        });
    }
    let mut labels = SeldLabels::empty(frames, classes);
    let mut seen = vec![false; frames * classes];
    let mut max_frame = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { path: path.into(), line, msg: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| Error::Parse { path: path.into(), line, msg };
        if rec.len() != 6 {
            return Err(perr(format!("expected 6 fields, found {}", rec.len())));
        }
        let int = |i: usize| rec[i].trim().parse::<usize>().map_err(|_| perr(format!("{} is not an index: {:?}", LABEL_HEADER[i], &rec[i])));
        let (t, c, a) = (int(0)?, int(1)?, int(2)?);
        let mut v = [0.0; 3];
        for k in 0..3 {
            v[k] = rec[3 + k]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| perr(format!("{} is not a finite number: {:?}", LABEL_HEADER[3 + k], &rec[3 + k])))?;
        }
        if c >= classes {
            return Err(perr(format!("class {c} out of range for {classes} classes")));
        }
        if a > 1 {
            return Err(perr(format!("active must be 0 or 1, found {a}")));
        }
        max_frame = Some(max_frame.map_or(t, |m: usize| m.max(t)));
        if t >= frames {
            continue;
        }
        let i = t * classes + c;
        if seen[i] {
            return Err(perr(format!("duplicate row for frame {t}, class {c}")));
        }
        seen[i] = true;
        labels.activity[i] = a == 1;
        labels.doa[3 * i..3 * i + 3].copy_from_slice(&v);
    }
    let found = max_frame.map_or(0, |m| m + 1);
    if found != frames {
        return Err(dataset_err(
            path,
            format!("label frame count {found} does not match feature frame count {frames} for the configured window"),
        ));
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        return Err(dataset_err(path, format!("missing row for frame {}, class {}", i / classes, i % classes)));
    }
    labels.check().map_err(|m| dataset_err(path, m))?;
    Ok(labels)
}

/// Writes `clips` and the manifest under `dir`.
pub fn write_dataset(cfg: &SynthConfig, clips: &[Clip], dir: &Path) -> Result<DatasetMeta> {
    let clip_dir = dir.join("clips");
    let label_dir = dir.join("labels");
    fs::create_dir_all(&clip_dir).map_err(io_err(&clip_dir))?;
    fs::create_dir_all(&label_dir).map_err(io_err(&label_dir))?;
    for clip in clips {
        write_wav(&clip_dir.join(format!("{}.wav", clip.id)), &clip.audio, clip.sample_rate)?;
        write_labels(&label_dir.join(format!("{}.csv", clip.id)), &clip.labels)?;
    }
    let meta = DatasetMeta {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        normalization: "SN3D first order, unit-gain W".into(),
        sample_rate: cfg.sample_rate,
        window: cfg.window,
        hop: cfg.hop(),
        clip_samples: cfg.clip_samples(),
        frames: cfg.frames(),
        classes: cfg.classes,
        overlap: cfg.overlap,
        seed: cfg.seed,
        grid: cfg.grid,
        timbres: cfg.timbres(),
        config: cfg.clone(),
        clips: clips.iter().map(|c| ClipMeta { id: c.id.clone(), split: c.split, events: c.events.clone() }).collect(),
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| dataset_err(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(meta)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    load_dataset_inner(dir, None)
}

/// Loads with labels checked against the frame grid of `window`.
pub fn load_dataset_with_window(dir: &Path, window: usize) -> Result<Dataset> {
    load_dataset_inner(dir, Some(window))
}

fn load_dataset_inner(dir: &Path, window: Option<usize>) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(dataset_err(dir, "dataset directory does not exist"));
    }
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if meta.format != DATASET_FORMAT || meta.version != DATASET_VERSION {
        return Err(dataset_err(
            &meta_path,
            format!("unsupported dataset format {} version {}", meta.format, meta.version),
        ));
    }
    if meta.classes == 0 || meta.sample_rate == 0 {
        return Err(dataset_err(&meta_path, "classes and sample_rate must be positive"));
    }
    let window = window.unwrap_or(meta.window);
    let frames = frame_count(meta.clip_samples, window);
    if frames == 0 {
        return Err(dataset_err(&meta_path, format!("clips are shorter than one {window}-sample window")));
    }
    let mut ids = HashSet::new();
    let mut clips = Vec::with_capacity(meta.clips.len());
    for cm in &meta.clips {
        if !ids.insert(cm.id.as_str()) {
            return Err(dataset_err(&meta_path, format!("duplicate clip id {}", cm.id)));
        }
        for ev in &cm.events {
            if !(ev.offset > ev.onset) || ev.class_id >= meta.classes || !meta.grid.contains(ev.azimuth, ev.elevation) {
                return Err(dataset_err(&meta_path, format!("invalid event in clip {}: {ev:?}", cm.id)));
            }
        }
        let wav_path = dir.join("clips").join(format!("{}.wav", cm.id));
        let (audio, sr) = read_wav(&wav_path)?;
        if sr != meta.sample_rate {
            return Err(dataset_err(&wav_path, format!("sample rate {sr} differs from the manifest's {}", meta.sample_rate)));
        }
        if audio[0].len() != meta.clip_samples {
            return Err(dataset_err(
                &wav_path,
                format!("truncated audio: expected {} samples per channel, found {}", meta.clip_samples, audio[0].len()),
            ));
        }
        let label_path = dir.join("labels").join(format!("{}.csv", cm.id));
        let labels = read_labels(&label_path, frames, meta.classes)?;
        clips.push(Clip {
            id: cm.id.clone(),
            split: cm.split,
            sample_rate: sr,
            audio,
            events: cm.events.clone(),
            labels,
        });
    }
    if clips.is_empty() {
        return Err(dataset_err(&meta_path, "dataset has no clips"));
    }
    Ok(Dataset { root: dir.to_path_buf(), meta, clips })
}
