mod common;

use proptest::prelude::*;
use qseld_core::features::stft_all_frames;
use qseld_core::init::rng_from_seed;
use qseld_core::model::checkpoint::Checkpoint;
use qseld_core::model::data::{extract_all, make_batch, sequences};
use qseld_core::model::{Frontend, QseldConfig, QseldModel};
use qseld_core::optim::gradcheck::random_quat;
use qseld_core::optim::train::{train, TrainConfig};
use qseld_core::params::{max_abs, Parameterized};
use qseld_core::precision::Precision;
use qseld_core::qnn::Mode;
use qseld_core::synth::synth_clips;

fn valid_config() -> impl Strategy<Value = QseldConfig> {
    (1usize..=3, 2u32..=4, 1usize..=3, 1usize..=4, 1usize..=3, 1usize..=3, 1usize..=3, any::<bool>())
        .prop_flat_map(|(filters, log_quarter, layers, frames, hidden, fc, classes, real)| {
            // split log2(M/4) into `layers` nonnegative exponents
            prop::collection::vec(0..=log_quarter, layers - 1).prop_map(move |mut cuts| {
                cuts.sort_unstable();
                let mut bounds = vec![0];
                bounds.extend(cuts);
                bounds.push(log_quarter);
                let pool_factors = bounds.windows(2).map(|w| 1usize << (w[1] - w[0])).collect();
                QseldConfig {
                    filters,
                    conv_layers: layers,
                    pool_factors,
                    frames,
                    window: 4 << log_quarter,
                    hidden,
                    fc,
                    classes,
                    frontend: if real { Frontend::Real } else { Frontend::Quaternion },
                    ..QseldConfig::desk()
                }
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shape_contract_holds_for_valid_configs(config in valid_config(), seed in 0u64..1000) {
        prop_assert!(config.validate().is_ok());
        let model = QseldModel::new(config.clone(), seed).unwrap();
        let (t, n) = (config.frames, config.classes);
        let x = random_quat(&mut rng_from_seed(seed), &[2, 2, t, config.bins()], 3.0);
        for mode in [Mode::Train, Mode::Eval] {
            let (out, cache) = model.forward(&x, mode).unwrap();
            prop_assert_eq!(out.sed.shape(), &[2, t, n]);
            prop_assert_eq!(out.doa.shape(), &[2, t, 3 * n]);
            prop_assert!(out.sed.data().iter().all(|&p| p > 0.0 && p < 1.0));
            prop_assert!(out.doa.data().iter().all(|&d| d.abs() < 1.0));
            let (g, gin) = model.backward(&cache, &vec![1.0; 2 * t * n], &vec![1.0; 6 * t * n]).unwrap();
            prop_assert_eq!(g.param_count(), model.param_count());
            prop_assert_eq!(gin.shape(), x.shape());
        }
    }
}

#[test]
fn desk_qcnn_output_shape() {
    let c = QseldConfig::desk();
    assert_eq!(c.qcnn_output_shape(), [8, 2, 8]);
    assert_eq!(c.frame_features(), 16);
    let p = QseldConfig::paper();
    assert_eq!(p.qcnn_output_shape(), [512, 2, 256]);
}

#[test]
fn combined_loss_and_zero_doa_weight() {
    let clips = synth_clips(&common::small_synth(2, 0)).unwrap();
    let data = extract_all(&common::train_clips(&clips), 64).unwrap();
    let seqs = sequences(&data, 8);
    let active: Vec<_> = seqs.iter().filter(|s| s.labels.activity.iter().any(|&a| a)).take(4).collect();
    let batch = make_batch(&active).unwrap();
    for lambda in [0.0, 1.0, 5.0] {
        let mut model = QseldModel::new(QseldConfig::desk(), 1).unwrap();
        model.config.doa_weight = lambda;
        let (loss, grads, _) = model.loss_and_grads(&batch, Mode::Train).unwrap();
        assert_eq!(loss.total, loss.sed + lambda * loss.doa);
        assert!(batch.sed.iter().any(|&v| v > 0.0));
        let doa_grad = max_abs(&grads.doa_fc).max(max_abs(&grads.doa_out));
        if lambda == 0.0 {
            assert_eq!(doa_grad, 0.0);
        } else {
            assert!(doa_grad > 0.0);
        }
    }
}

#[test]
fn identical_clips_give_identical_predictions() {
    let clips = synth_clips(&common::small_synth(1, 2)).unwrap();
    let f = stft_all_frames(&clips[0].audio, 64, 8000).unwrap();
    let model = QseldModel::new(QseldConfig::desk(), 3).unwrap();
    let a = model.predict(&f).unwrap();
    let b = model.predict(&f.clone()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.frames, f.frames);
}

#[test]
fn checkpoint_round_trip_predicts_bitwise() {
    let clips = synth_clips(&common::small_synth(3, 5)).unwrap();
    let data = extract_all(&clips.iter().collect::<Vec<_>>(), 64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for precision in [Precision::F64, Precision::F32] {
        let config = TrainConfig { epochs: 2, precision, validation_fraction: 0.0, ..TrainConfig::default() };
        let out = train(QseldModel::new(QseldConfig::desk(), 0).unwrap(), &data, &config).unwrap();
        let path = dir.path().join(format!("{precision}.ckpt"));
        out.last.save(&path).unwrap();
        let loaded = Checkpoint::load(&path, None).unwrap();
        assert_eq!(loaded, out.last);
        let mut feats = data[0].features.clone();
        loaded.preprocessing.apply(&mut feats);
        feats.round(precision);
        assert_eq!(loaded.model.predict(&feats).unwrap(), out.last.model.predict(&feats).unwrap());
        let mut buffers_moved = false;
        loaded.model.visit_buffers("", &mut |_, _, b| buffers_moved |= b.iter().any(|&v| v != 0.0 && v != 1.0));
        assert!(buffers_moved);
    }
}
