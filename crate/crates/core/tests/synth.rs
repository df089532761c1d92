mod common;

use std::fs;
use std::path::Path;

use qseld_core::features::frame_count;
use qseld_core::synth::{load_dataset, load_dataset_with_window, synth_clips, synth_dataset, SynthConfig};
use qseld_core::Error;

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "clips", "labels"] {
        let mut entries: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries.into_iter().filter(|p| p.is_file()) {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn round_trip_reproduces_labels_and_audio() {
    let cfg = common::small_synth(6, 4);
    let dir = tempfile::tempdir().unwrap();
    let meta = synth_dataset(&cfg, dir.path()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    let clips = synth_clips(&cfg).unwrap();
    assert_eq!(ds.meta, meta);
    assert_eq!(ds.clips.len(), clips.len());
    for (a, b) in ds.clips.iter().zip(&clips) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.split, b.split);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.events, b.events);
        for (ca, cb) in a.audio.iter().zip(&b.audio) {
            assert!(ca.iter().zip(cb).all(|(x, y)| *x == *y as f32 as f64));
        }
    }
}

#[test]
fn same_seed_gives_byte_identical_dataset() {
    let cfg = common::small_synth(5, 9);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth_dataset(&cfg, a.path()).unwrap();
    synth_dataset(&cfg, b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 1 + 2 * 5);
    assert_eq!(fa, fb);
    let c = tempfile::tempdir().unwrap();
    synth_dataset(&SynthConfig { seed: 10, ..cfg }, c.path()).unwrap();
    assert_ne!(fa, files(c.path()));
}

#[test]
fn truncated_audio_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    synth_dataset(&common::small_synth(3, 0), dir.path()).unwrap();
    let wav = dir.path().join("clips/clip_0001.wav");
    let bytes = fs::read(&wav).unwrap();
    fs::write(&wav, &bytes[..bytes.len() / 2]).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("clip_0001.wav"), "{err}");
}

#[test]
fn malformed_label_row_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    synth_dataset(&common::small_synth(3, 0), dir.path()).unwrap();
    let csv = dir.path().join("labels/clip_0002.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "4,1,yes,0,0,0";
    fs::write(&csv, lines.join("\n")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 6, .. }), "{err}");
    assert!(err.to_string().contains("clip_0002.csv"), "{err}");
}

#[test]
fn label_frames_must_match_feature_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_synth(2, 0);
    synth_dataset(&cfg, dir.path()).unwrap();
    assert!(load_dataset_with_window(dir.path(), cfg.window).is_ok());
    let err = load_dataset_with_window(dir.path(), 128).unwrap_err().to_string();
    let expected = frame_count(cfg.clip_samples(), 128);
    assert!(err.contains(&format!("feature frame count {expected}")), "{err}");
}

#[test]
fn single_source_energy_and_direction() {
    let cfg = SynthConfig { n_clips: 30, events_per_clip: 1, seed: 2, ..SynthConfig::default() };
    for clip in synth_clips(&cfg).unwrap() {
        assert_eq!(clip.events.len(), 1);
        assert!((common::energy_ratio(&clip.audio) - 1.0).abs() < 1e-9);
        let (theta, phi) = common::decode_direction(&clip.audio, &cfg.grid);
        let ev = &clip.events[0];
        assert!((theta - ev.azimuth).abs() < 1e-9 && (phi - ev.elevation).abs() < 1e-9, "{}", clip.id);
    }
}

#[test]
fn inactive_frames_are_below_minus_60_dbfs() {
    let cfg = SynthConfig { overlap: 2, ..common::small_synth(8, 1) };
    let hop = cfg.hop();
    let threshold = 10f64.powf(-60.0 / 20.0);
    let mut silent = 0;
    for clip in synth_clips(&cfg).unwrap() {
        for t in (0..clip.labels.frames).filter(|&t| clip.labels.active_count(t) == 0) {
            silent += 1;
            for ch in &clip.audio {
                let seg = &ch[t * hop..t * hop + cfg.window];
                let rms = (seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64).sqrt();
                assert!(rms < threshold, "{} frame {t}: rms {rms}", clip.id);
            }
        }
    }
    assert!(silent > 0);
}

#[test]
fn overlap_limit_holds_in_labels() {
    for (overlap, events_per_clip) in [(1, 3), (2, 5)] {
        let cfg = SynthConfig { overlap, events_per_clip, ..common::small_synth(10, 3) };
        let mut max = 0;
        for clip in synth_clips(&cfg).unwrap() {
            for t in 0..clip.labels.frames {
                max = max.max(clip.labels.active_count(t));
            }
            for ev in &clip.events {
                assert!(cfg.grid.contains(ev.azimuth, ev.elevation));
            }
        }
        assert_eq!(max, overlap);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(matches!(synth_clips(&SynthConfig { overlap: 0, ..SynthConfig::default() }), Err(Error::Config(_))));
    let packed = SynthConfig { events_per_clip: 40, max_event_seconds: 1.5, min_event_seconds: 1.0, ..SynthConfig::default() };
    assert!(synth_clips(&packed).is_err());
}
