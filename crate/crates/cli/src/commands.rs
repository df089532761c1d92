use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use qseld_core::features::stft_all_frames;
use qseld_core::metrics::MetricReport;
use qseld_core::model::checkpoint::Checkpoint;
use qseld_core::model::data::{evaluate, evaluate_reference, extract_all, standardize, ClipData, Prediction};
use qseld_core::model::{Frontend, QseldConfig, QseldModel};
use qseld_core::optim::gradcheck::GradTarget;
use qseld_core::optim::train::train;
use qseld_core::precision::Precision;
use qseld_core::synth::{load_dataset, read_wav, synth_dataset, Clip, Dataset, Split};

use crate::config::{usage, RunConfig};
use crate::run::RunDir;

/// Clip selection for `eval` and `predict`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn select(self, ds: &Dataset) -> Vec<&Clip> {
        match self {
            SplitArg::Train => ds.split(Split::Train),
            SplitArg::Test => ds.split(Split::Test),
            SplitArg::All => ds.clips.iter().collect(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Test => "test",
            SplitArg::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    Quaternion,
    Real,
}

pub fn synth(cfg: &RunConfig, runs_dir: &Path, tag: &str, out: Option<PathBuf>) -> Result<()> {
    if let Some(dir) = &out {
        if dir.exists() && fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(true) {
            return Err(usage(format!("output directory {} exists and is not empty", dir.display())));
        }
    }
    let run = RunDir::create(runs_dir, tag)?;
    let out = out.unwrap_or_else(|| run.file("dataset"));
    run.write_config(cfg, &[("command", "synth".into()), ("dataset", out.display().to_string())])?;
    let meta = synth_dataset(&cfg.synth, &out)?;
    log::info!("wrote {} clips of {} frames to {}", meta.clips.len(), meta.frames, out.display());
    eprintln!("run directory: {}", run.path.display());
    println!("{}", out.join("meta.json").display());
    Ok(())
}

fn load(data: &Path) -> Result<Dataset> {
    load_dataset(data).with_context(|| format!("cannot load dataset {}", data.display()))
}

fn check_compatible(model: &QseldConfig, ds: &Dataset, what: &str) -> Result<()> {
    if model.window != ds.meta.window {
        return Err(usage(format!(
            "{what} uses window M={} but dataset {} was framed with M={}",
            model.window,
            ds.root.display(),
            ds.meta.window
        )));
    }
    if model.classes != ds.meta.classes {
        return Err(usage(format!(
            "{what} has {} classes but dataset {} has {}",
            model.classes,
            ds.root.display(),
            ds.meta.classes
        )));
    }
    Ok(())
}

fn features(clips: &[&Clip], window: usize) -> Result<Vec<ClipData>> {
    Ok(extract_all(clips, window)?)
}

fn report_csv(report: &MetricReport) -> String {
    format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row())
}

pub fn train_cmd(cfg: &mut RunConfig, runs_dir: &Path, tag: &str, data: &Path, baseline: Baseline) -> Result<()> {
    if baseline == Baseline::Real {
        cfg.model.frontend = Frontend::Real;
    }
    let ds = load(data)?;
    check_compatible(&cfg.model, &ds, "model config")?;
    let train_clips = ds.split(Split::Train);
    if train_clips.is_empty() {
        bail!("dataset {} has no training clips", data.display());
    }
    let test_clips = ds.split(Split::Test);
    let run = RunDir::create(runs_dir, tag)?;
    run.write_config(cfg, &[("command", "train".into()), ("data", data.display().to_string())])?;
    eprintln!("run directory: {}", run.path.display());

    let train_data = features(&train_clips, cfg.model.window)?;
    let model = QseldModel::new(cfg.model.clone(), cfg.seed())?;
    let params = model.param_count();
    let start = Instant::now();
    let outcome = train(model, &train_data, &cfg.train)?;
    let elapsed = start.elapsed().as_secs_f64();

    outcome.best.save(&run.file("best.ckpt"))?;
    outcome.last.save(&run.file("last.ckpt"))?;
    run.write("train_log.csv", outcome.log.to_csv())?;
    println!("parameters = {params}");
    println!("epochs = {}", outcome.log.records.len());
    println!("best_epoch = {}", outcome.best_epoch);
    println!("seconds = {elapsed:.1}");
    if !test_clips.is_empty() {
        let mut test_data = features(&test_clips, cfg.model.window)?;
        let best = &outcome.best;
        standardize(&mut test_data, &best.preprocessing, best.precision);
        let report = evaluate(&best.model, &test_data, cfg.eval.threshold)?;
        run.write("test_metrics.csv", report_csv(&report))?;
        println!("test {report}");
    }
    if let Some(msg) = outcome.diverged {
        bail!("training diverged at {msg}; checkpoints hold the last finite state");
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path, None)?;
    for w in &ckpt.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(ckpt)
}

pub fn eval(
    cfg: &RunConfig,
    runs_dir: &Path,
    tag: &str,
    checkpoint: Option<&Path>,
    data: &Path,
    split: SplitArg,
    ground_truth: bool,
) -> Result<()> {
    let ckpt = match (ground_truth, checkpoint) {
        (true, _) => None,
        (false, Some(p)) => Some(load_checkpoint(p)?),
        (false, None) => return Err(usage("eval needs --checkpoint unless --ground-truth is given")),
    };
    let ds = load(data)?;
    if let Some(c) = &ckpt {
        check_compatible(&c.model.config, &ds, "checkpoint")?;
    }
    let clips = split.select(&ds);
    if clips.is_empty() {
        bail!("dataset {} has no clips in split {}", data.display(), split.name());
    }
    let mut notes = vec![("command", "eval".to_string()), ("data", data.display().to_string())];
    notes.push(("split", split.name().into()));
    match checkpoint.filter(|_| !ground_truth) {
        Some(p) => notes.push(("checkpoint", p.display().to_string())),
        None => notes.push(("predictions", "ground truth".into())),
    }
    let mut data = features(&clips, ds.meta.window)?;
    let report = match &ckpt {
        Some(c) => {
            standardize(&mut data, &c.preprocessing, c.precision);
            evaluate(&c.model, &data, cfg.eval.threshold)?
        }
        None => evaluate_reference(&data)?,
    };
    let run = RunDir::create(runs_dir, tag)?;
    run.write_config(cfg, &notes)?;
    run.write("report.txt", report.to_text())?;
    run.write("metrics.csv", report_csv(&report))?;
    eprintln!("run directory: {}", run.path.display());
    print!("{}", report.to_text());
    Ok(())
}

pub const PREDICTION_HEADER: &str = "frame,class,prob,active,x,y,z";

fn prediction_csv(p: &Prediction, threshold: f64) -> String {
    let active = p.activity(threshold);
    let mut s = String::from(PREDICTION_HEADER);
    s.push('\n');
    for t in 0..p.frames {
        for c in 0..p.classes {
            let i = t * p.classes + c;
            let d = &p.doa[3 * i..3 * i + 3];
            let _ = writeln!(
                s,
                "{t},{c},{:.9},{},{:.9},{:.9},{:.9}",
                p.probs[i],
                u8::from(active[i]),
                d[0],
                d[1],
                d[2]
            );
        }
    }
    s
}

#[allow(clippy::too_many_arguments)]
pub fn predict(
    cfg: &RunConfig,
    runs_dir: &Path,
    tag: &str,
    checkpoint: &Path,
    wav: Option<&Path>,
    data: Option<&Path>,
    split: SplitArg,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let window = ckpt.model.config.window;
    let mut inputs: Vec<(String, qseld_core::features::FeatureClip)> = Vec::new();
    let mut notes = vec![("command", "predict".to_string()), ("checkpoint", checkpoint.display().to_string())];
    match (wav, data) {
        (Some(path), None) => {
            let (audio, sample_rate) = read_wav(path)?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "clip".into());
            inputs.push((stem, stft_all_frames(&audio, window, sample_rate)?));
            notes.push(("wav", path.display().to_string()));
        }
        (None, Some(dir)) => {
            let ds = load(dir)?;
            check_compatible(&ckpt.model.config, &ds, "checkpoint")?;
            let clips = split.select(&ds);
            inputs.extend(features(&clips, window)?.into_iter().map(|d| (d.id, d.features)));
            notes.push(("data", dir.display().to_string()));
            notes.push(("split", split.name().into()));
        }
        _ => return Err(usage("predict needs exactly one of --wav and --data")),
    }
    let run = RunDir::create(runs_dir, tag)?;
    run.write_config(cfg, &notes)?;
    let out_dir = run.file("predictions");
    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    for (id, mut f) in inputs {
        ckpt.preprocessing.apply(&mut f);
        f.round(ckpt.precision);
        let p = ckpt.model.predict(&f)?;
        let path = out_dir.join(format!("{id}.csv"));
        fs::write(&path, prediction_csv(&p, cfg.eval.threshold))
            .with_context(|| format!("cannot write {}", path.display()))?;
        println!("{}", path.display());
    }
    eprintln!("run directory: {}", run.path.display());
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, runs_dir: &Path, tag: &str, layer: Option<&str>) -> Result<()> {
    if cfg.precision == Precision::F32 {
        return Err(usage(
            "gradient checks need double precision; finite differences in f32 storage are dominated by rounding (set precision = \"f64\")",
        ));
    }
    let targets: Vec<GradTarget> = match layer {
        Some(name) => vec![GradTarget::parse(name).ok_or_else(|| {
            let names: Vec<&str> = GradTarget::ALL.iter().map(|t| t.name()).collect();
            usage(format!("unknown layer {name:?}; choose one of {}", names.join(", ")))
        })?],
        None => GradTarget::ALL.to_vec(),
    };
    let run = RunDir::create(runs_dir, tag)?;
    let mut notes = vec![("command", "gradcheck".to_string())];
    if let Some(l) = layer {
        notes.push(("layer", l.into()));
    }
    run.write_config(cfg, &notes)?;
    let mut text = String::new();
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for t in targets {
        let report = t.run(cfg.seed())?;
        let pass = report.max_rel_err < t.tolerance();
        if !pass {
            failed.push(t.name());
        }
        worst = worst.max(report.max_rel_err);
        let line = format!("{}: {report} tol={:.0e} {}", t.name(), t.tolerance(), if pass { "ok" } else { "FAIL" });
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    let line = format!("max_rel_err = {worst:.3e}");
    println!("{line}");
    text.push_str(&line);
    text.push('\n');
    run.write("gradcheck.txt", text)?;
    eprintln!("run directory: {}", run.path.display());
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}
