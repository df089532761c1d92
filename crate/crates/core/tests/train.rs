mod common;

use qseld_core::model::data::{extract_all, ClipData};
use qseld_core::model::{QseldConfig, QseldModel};
use qseld_core::optim::train::{train, TrainConfig};
use qseld_core::params::Parameterized;
use qseld_core::precision::Precision;
use qseld_core::synth::synth_clips;

fn data(n: usize, seed: u64) -> Vec<ClipData> {
    let clips = synth_clips(&common::small_synth(n, seed)).unwrap();
    extract_all(&clips.iter().collect::<Vec<_>>(), 64).unwrap()
}

fn model() -> QseldModel {
    QseldModel::new(QseldConfig::desk(), 0).unwrap()
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let out = train(model(), &data(3, 0), &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
    assert!(out.log.records.is_empty());
    assert_eq!(out.log.to_csv().lines().count(), 1);
    assert_eq!((out.best_epoch, out.best.epoch), (0, 0));
    assert_eq!(out.best.model, model());
    assert!(out.diverged.is_none());
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let d = data(5, 1);
    let cfg = TrainConfig { epochs: 3, seed: 7, ..Default::default() };
    let a = train(model(), &d, &cfg).unwrap();
    let b = train(model(), &d, &cfg).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    assert_eq!(a.last.to_bytes().unwrap(), b.last.to_bytes().unwrap());
    let c = train(model(), &d, &TrainConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.log.to_csv(), c.log.to_csv());
}

#[test]
fn overfits_two_clips() {
    let out = train(model(), &data(2, 3), &TrainConfig { epochs: 200, ..Default::default() }).unwrap();
    let first = out.log.records[0].train_loss;
    let last = out.log.records.last().unwrap().train_loss;
    assert!(last <= 0.1 * first, "loss {first} -> {last}");
}

#[test]
fn best_checkpoint_tracks_validation_score() {
    let out = train(model(), &data(6, 2), &TrainConfig { epochs: 6, ..Default::default() }).unwrap();
    let best = out.log.records.iter().map(|r| r.val.s_seld).fold(f64::INFINITY, f64::min);
    let rec = &out.log.records[out.best_epoch - 1];
    assert_eq!(rec.val.s_seld, best);
    assert_eq!(out.best.epoch, out.best_epoch);
    assert_eq!(out.last.epoch, 6);
}

#[test]
fn divergence_stops_with_last_good_checkpoint() {
    let mut d = data(3, 4);
    d[1].features.planes[0][10] = f64::NAN;
    let out = train(model(), &d, &TrainConfig { epochs: 5, validation_fraction: 0.0, ..Default::default() }).unwrap();
    let msg = out.diverged.expect("run should report divergence");
    assert!(msg.starts_with("epoch 1"), "{msg}");
    assert!(out.log.records.is_empty());
    assert_eq!(out.best.model, model());
    let mut finite = true;
    out.last.model.visit_params("", &mut |_, _, p| finite &= p.iter().all(|v| v.is_finite()));
    assert!(finite);
}

#[test]
fn f32_mode_keeps_parameters_single_precision() {
    let out = train(model(), &data(3, 5), &TrainConfig { epochs: 2, precision: Precision::F32, ..Default::default() }).unwrap();
    let mut exact = true;
    out.last.model.visit_params("", &mut |_, _, p| exact &= p.iter().all(|&v| v == v as f32 as f64));
    out.last.model.visit_buffers("", &mut |_, _, p| exact &= p.iter().all(|&v| v == v as f32 as f64));
    assert!(exact);
}
