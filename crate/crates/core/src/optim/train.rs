//! Mini-batch training loop with validation-based checkpoint selection.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::features::FeatureStats;
use crate::init::{derive_seed, rng_from_seed};
use crate::metrics::MetricReport;
use crate::model::checkpoint::Checkpoint;
use crate::model::data::{evaluate, make_batch, sequences, standardize, ClipData, Sequence, ACTIVITY_THRESHOLD};
use crate::model::QseldModel;
use crate::params::Parameterized;
use crate::precision::Precision;
use crate::qnn::batchnorm::Mode;

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub doa_weight: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Fraction of the training clips held out for checkpoint selection,
    /// taken from the end of the list.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 16,
            lr: 1e-3,
            doa_weight: 5.0,
            seed: 0,
            precision: Precision::F64,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.doa_weight.is_finite() && self.doa_weight >= 0.0) {
            return Err(Error::config(format!("doa_weight must be nonnegative, got {}", self.doa_weight)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    /// Number of clips out of `n` used for validation.
    pub fn validation_clips(&self, n: usize) -> usize {
        let v = (n as f64 * self.validation_fraction).round() as usize;
        v.min(n.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_sed: f64,
    pub train_doa: f64,
    /// Loss and metrics on the validation clips, or on the training clips
    /// when no validation clips were held out.
    pub val_loss: f64,
    pub val: MetricReport,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,train_sed,train_doa,val_loss,ER,F,DOA_err,K,S_SED,S_DOA,S_SELD";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_sed, r.train_doa, r.val_loss);
            for v in r.val.values() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation S_SELD (the initial model when
    /// no epoch completed).
    pub best: Checkpoint,
    pub best_epoch: usize,
    /// State after the last epoch that finished without numerical failure.
    pub last: Checkpoint,
    pub log: TrainLog,
    /// Set when training stopped early on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Trains `model` on `clips` (raw, unstandardized features). Feature
/// statistics are fitted on the clips that remain after the validation split
/// and stored in the returned checkpoints.
pub fn train(mut model: QseldModel, clips: &[ClipData], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::Input("training needs at least one clip".into()));
    }
    model.config.doa_weight = config.doa_weight;
    model.config.validate()?;
    let precision = config.precision;
    model.visit_params_mut("", &mut |_, p| precision.round_slice(p));

    let n_val = config.validation_clips(clips.len());
    let (fit_part, val_part) = clips.split_at(clips.len() - n_val);
    let stats = FeatureStats::fit(fit_part.iter().map(|c| &c.features))?;
    let mut train_data = fit_part.to_vec();
    let mut val_data = val_part.to_vec();
    standardize(&mut train_data, &stats, precision);
    standardize(&mut val_data, &stats, precision);
    let select_data = if val_data.is_empty() { &train_data } else { &val_data };

    let t = model.config.frames;
    let train_seqs = sequences(&train_data, t);
    let select_seqs = sequences(select_data, t);

    let adam_cfg = AdamConfig { lr: config.lr, ..AdamConfig::default() };
    let mut adam = AdamState::new(adam_cfg, &model);
    let snapshot = |model: &QseldModel, adam: &AdamState, epoch: usize| {
        let mut c = Checkpoint::new(model.clone(), config.seed, precision, stats.clone());
        c.epoch = epoch;
        c.adam = Some(adam.clone());
        c
    };
    let mut best = snapshot(&model, &adam, 0);
    let mut best_epoch = 0;
    let mut best_score = f64::INFINITY;
    let mut log = TrainLog::default();
    let mut diverged = None;
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();

    for epoch in 1..=config.epochs {
        let mut rng = rng_from_seed(derive_seed(derive_seed(config.seed, SHUFFLE_STREAM), epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let before = (model.clone(), adam.clone());
        match run_epoch(&mut model, &mut adam, &train_seqs, &order, config.batch_size, precision) {
            Ok((train_loss, train_sed, train_doa)) => {
                let val_loss = eval_loss(&model, &select_seqs, config.batch_size)?;
                let val = evaluate(&model, select_data, ACTIVITY_THRESHOLD)?;
                if !val_loss.is_finite() {
                    diverged = Some(format!("epoch {epoch}: validation loss is {val_loss}"));
                    (model, adam) = before;
                    break;
                }
                log::info!(
                    "epoch {epoch}/{}: train_loss={train_loss:.6} val_loss={val_loss:.6} S_SELD={:.4}",
                    config.epochs,
                    val.s_seld
                );
                if val.s_seld < best_score {
                    best_score = val.s_seld;
                    best_epoch = epoch;
                    best = snapshot(&model, &adam, epoch);
                }
                log.records.push(EpochRecord { epoch, train_loss, train_sed, train_doa, val_loss, val });
            }
            Err(Error::Numerical(msg)) => {
                log::error!("training diverged in epoch {epoch}: {msg}");
                diverged = Some(format!("epoch {epoch}: {msg}"));
                (model, adam) = before;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let last = snapshot(&model, &adam, log.records.len());
    Ok(TrainOutcome { best, best_epoch, last, log, diverged })
}

fn run_epoch(
    model: &mut QseldModel,
    adam: &mut AdamState,
    seqs: &[Sequence],
    order: &[usize],
    batch_size: usize,
    precision: Precision,
) -> Result<(f64, f64, f64)> {
    let (mut total, mut sed, mut doa, mut count) = (0.0, 0.0, 0.0, 0usize);
    for chunk in order.chunks(batch_size) {
        let refs: Vec<&Sequence> = chunk.iter().map(|&i| &seqs[i]).collect();
        let batch = make_batch(&refs)?;
        let (loss, grads, cache) = model.loss_and_grads(&batch, Mode::Train)?;
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!("training loss is {}", loss.total)));
        }
        adam.step(model, &grads, precision)?;
        model.update_running(&cache);
        model.visit_buffers_mut("", &mut |_, b| precision.round_slice(b));
        let w = chunk.len() as f64;
        total += w * loss.total;
        sed += w * loss.sed;
        doa += w * loss.doa;
        count += chunk.len();
    }
    let n = count.max(1) as f64;
    Ok((total / n, sed / n, doa / n))
}

/// Mean eval-mode loss over `seqs`, weighted by batch size.
pub fn eval_loss(model: &QseldModel, seqs: &[Sequence], batch_size: usize) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    let refs: Vec<&Sequence> = seqs.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let batch = make_batch(chunk)?;
        let (out, _) = model.forward(&batch.input, Mode::Eval)?;
        total += chunk.len() as f64 * model.loss(&out, &batch)?.total;
        count += chunk.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}
