use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_qseld");

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Env {
        Env { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn runs(&self) -> PathBuf {
        self.path("runs")
    }

    fn qseld(&self, args: &[&str]) -> Output {
        self.qseld_env(args, None)
    }

    fn qseld_env(&self, args: &[&str], seed: Option<&str>) -> Output {
        let mut cmd = Command::new(BIN);
        cmd.arg("--runs-dir").arg(self.runs()).args(args).env_remove("QSELD_SEED").env_remove("RUST_LOG");
        if let Some(s) = seed {
            cmd.env("QSELD_SEED", s);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.qseld(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    /// Run directory whose name ends with `-tag`.
    fn run_dir(&self, tag: &str) -> PathBuf {
        let suffix = format!("-{tag}");
        let mut hits: Vec<PathBuf> = fs::read_dir(self.runs())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap().to_str().unwrap().ends_with(&suffix))
            .collect();
        assert_eq!(hits.len(), 1, "run dirs for {tag}: {hits:?}");
        hits.pop().unwrap()
    }

    fn run_count(&self) -> usize {
        fs::read_dir(self.runs()).map(|d| d.count()).unwrap_or(0)
    }

    /// Small dataset: 6 clips, 2 of them test.
    fn dataset(&self, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(name);
        let mut args = vec!["--tag", name, "--set", "synth.n_clips=6", "--set", "synth.test_fraction=0.34"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["synth", "--out", out.to_str().unwrap()]);
        self.ok(&args);
        out
    }

    fn train(&self, data: &Path, tag: &str, extra: &[&str]) -> PathBuf {
        let mut args = vec!["--tag", tag, "--set", "train.epochs=2"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["train", "--data", data.to_str().unwrap()]);
        self.ok(&args);
        self.run_dir(tag)
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn active_per_frame(labels: &Path) -> HashMap<usize, usize> {
    let mut counts = HashMap::new();
    for line in fs::read_to_string(labels).unwrap().lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let frame: usize = cols[0].parse().unwrap();
        let entry = counts.entry(frame).or_insert(0);
        if cols[2] == "1" {
            *entry += 1;
        }
    }
    counts
}

fn kv(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.trim().strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn synth_default_desk_dataset_is_deterministic() {
    let env = Env::new();
    let stdout = env.ok(&["synth", "--out", env.path("a").to_str().unwrap()]);
    assert_eq!(stdout.trim(), env.path("a").join("meta.json").display().to_string());
    env.ok(&["synth", "--out", env.path("b").to_str().unwrap()]);
    let meta = fs::read_to_string(env.path("a/meta.json")).unwrap();
    assert!(meta.contains("\"classes\": 3"), "{meta}");
    assert_eq!(fs::read_dir(env.path("a/clips")).unwrap().count(), 20);
    assert_eq!(fs::read_dir(env.path("a/labels")).unwrap().count(), 20);
    assert_eq!(tree_bytes(&env.path("a")), tree_bytes(&env.path("b")));

    env.ok(&["--seed", "1", "synth", "--out", env.path("c").to_str().unwrap()]);
    assert_ne!(tree_bytes(&env.path("a")), tree_bytes(&env.path("c")));
}

#[test]
fn synth_overlap_two_reaches_but_never_exceeds_two() {
    let env = Env::new();
    let ds = env.dataset("o2", &["--set", "synth.overlap=2", "--set", "synth.events_per_clip=6"]);
    let mut max = 0;
    for e in fs::read_dir(ds.join("labels")).unwrap() {
        max = max.max(active_per_frame(&e.unwrap().path()).into_values().max().unwrap());
    }
    assert_eq!(max, 2);
}

#[test]
fn synth_rejects_invalid_overlap() {
    let env = Env::new();
    let out = env.qseld(&["--set", "synth.overlap=0", "synth"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("overlap"), "{}", stderr(&out));
    assert_eq!(env.run_count(), 0);
}

#[test]
fn synth_refuses_nonempty_output() {
    let env = Env::new();
    let ds = env.dataset("d", &[]);
    assert_ne!(code(&env.qseld(&["synth", "--out", ds.to_str().unwrap()])), 0);
}

#[test]
fn train_writes_checkpoints_log_and_config() {
    let env = Env::new();
    let ds = env.dataset("d", &[]);
    let run = env.train(&ds, "q", &[]);
    for f in ["best.ckpt", "last.ckpt", "train_log.csv", "config.toml", "test_metrics.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 12);
    assert_eq!(lines.count(), 2);
    let config = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(config.contains("epochs = 2"), "{config}");
    assert!(config.contains("frontend = \"quaternion\""));
}

#[test]
fn baseline_real_uses_real_frontend_with_same_seed() {
    let env = Env::new();
    let ds = env.dataset("d", &[]);
    let q = env.ok(&["--tag", "q", "--set", "train.epochs=1", "train", "--data", ds.to_str().unwrap()]);
    let r = env.ok(&[
        "--tag", "r", "--set", "train.epochs=1", "train", "--data", ds.to_str().unwrap(), "--baseline", "real",
    ]);
    assert_ne!(kv(&q, "parameters"), kv(&r, "parameters"));
    let config = fs::read_to_string(env.run_dir("r").join("config.toml")).unwrap();
    assert!(config.contains("frontend = \"real\""), "{config}");
    assert!(config.contains("seed = 0"));
}

#[test]
fn train_missing_dataset_fails_with_message() {
    let env = Env::new();
    let missing = env.path("missing");
    let out = env.qseld(&["train", "--data", missing.to_str().unwrap()]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("does not exist"), "{}", stderr(&out));
    assert!(stderr(&out).contains(missing.to_str().unwrap()));
}

#[test]
fn training_is_deterministic_and_env_seed_is_a_fallback() {
    let env = Env::new();
    let ds = env.dataset("d", &[]);
    let a = env.train(&ds, "a", &[]);
    let b = env.train(&ds, "b", &["--threads", "1"]);
    for f in ["best.ckpt", "last.ckpt", "train_log.csv", "test_metrics.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let data = ds.to_str().unwrap();
    let out = env.qseld_env(&["--tag", "e", "--set", "train.epochs=1", "train", "--data", data], Some("7"));
    assert!(out.status.success());
    let config = fs::read_to_string(env.run_dir("e").join("config.toml")).unwrap();
    assert!(config.lines().any(|l| l == "seed = 7"), "{config}");
    let out = env.qseld_env(&["--tag", "f", "--seed", "3", "--set", "train.epochs=1", "train", "--data", data], Some("7"));
    assert!(out.status.success());
    let config = fs::read_to_string(env.run_dir("f").join("config.toml")).unwrap();
    assert!(config.lines().any(|l| l == "seed = 3"), "{config}");
}

#[test]
fn saved_config_reproduces_the_run() {
    let env = Env::new();
    let ds = env.dataset("d", &[]);
    let a = env.train(&ds, "a", &["--seed", "5", "--set", "train.lr=0.002"]);
    let config = a.join("config.toml");
    env.ok(&["--tag", "b", "--config", config.to_str().unwrap(), "train", "--data", ds.to_str().unwrap()]);
    let b = env.run_dir("b");
    assert_eq!(fs::read(a.join("best.ckpt")).unwrap(), fs::read(b.join("best.ckpt")).unwrap());
}

#[test]
fn eval_ground_truth_scores_zero_with_seven_column_csv() {
    let env = Env::new();
    let ds = env.dataset("d", &[]);
    let stdout = env.ok(&["--tag", "gt", "eval", "--ground-truth", "--data", ds.to_str().unwrap(), "--split", "all"]);
    assert_eq!(kv(&stdout, "S_SELD"), 0.0);
    assert_eq!(kv(&stdout, "ER"), 0.0);
    assert_eq!(stdout.lines().count(), 7);
    let csv = fs::read_to_string(env.run_dir("gt").join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "ER,F,DOA_err,K,S_SED,S_DOA,S_SELD");
    assert_eq!(lines[1].split(',').count(), 7);
}

#[test]
fn eval_checkpoint_matches_train_report() {
    let env = Env::new();
    let ds = env.dataset("d", &[]);
    let run = env.train(&ds, "t", &[]);
    let ckpt = run.join("best.ckpt");
    env.ok(&["--tag", "ev", "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", ds.to_str().unwrap()]);
    assert_eq!(
        fs::read_to_string(run.join("test_metrics.csv")).unwrap(),
        fs::read_to_string(env.run_dir("ev").join("metrics.csv")).unwrap()
    );
}

#[test]
fn eval_window_mismatch_fails_before_inference() {
    let env = Env::new();
    let ds = env.dataset("d", &[]);
    let other = env.dataset("m128", &["--set", "synth.window=128"]);
    let ckpt = env.train(&ds, "t", &[]).join("best.ckpt");
    let before = env.run_count();
    let out = env.qseld(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", other.to_str().unwrap()]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("M=64") && stderr(&out).contains("M=128"), "{}", stderr(&out));
    assert_eq!(env.run_count(), before);
}

#[test]
fn eval_requires_checkpoint_or_ground_truth() {
    let env = Env::new();
    assert_eq!(code(&env.qseld(&["eval", "--data", "x"])), 2);
}

#[test]
fn predict_writes_one_row_per_frame_and_class() {
    let env = Env::new();
    let ds = env.dataset("d", &[]);
    let ckpt = env.train(&ds, "t", &[]).join("best.ckpt");
    let wav = ds.join("clips/clip_0000.wav");
    let stdout = env.ok(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--wav", wav.to_str().unwrap()]);
    let csv = fs::read_to_string(stdout.trim()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "frame,class,prob,active,x,y,z");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let frames = active_per_frame(&ds.join("labels/clip_0000.csv")).len();
    assert_eq!(rows.len(), frames * 3);
    for r in &rows {
        assert!((0.0..=1.0).contains(&r[2]));
        assert_eq!(r[3], f64::from(u8::from(r[2] > 0.5)));
        assert!(r[4..].iter().all(|v| v.abs() <= 1.0));
    }

    let stdout = env.ok(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--data", ds.to_str().unwrap()]);
    let files: Vec<&str> = stdout.lines().collect();
    assert_eq!(files.len(), 2);
    assert!(files[0].ends_with("clip_0004.csv") && files[1].ends_with("clip_0005.csv"), "{files:?}");
}

#[test]
fn gradcheck_single_layer() {
    let env = Env::new();
    let stdout = env.ok(&["gradcheck", "--layer", "qconv2d"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2, "{stdout}");
    assert!(lines[0].starts_with("qconv2d:"));
    assert!(kv(&stdout, "max_rel_err") < 1e-5);
}

#[test]
fn gradcheck_all_stock_targets() {
    let env = Env::new();
    let stdout = env.ok(&["gradcheck"]);
    assert_eq!(stdout.lines().count(), 12, "{stdout}");
    assert!(kv(&stdout, "max_rel_err") < 1e-5);
}

#[test]
fn gradcheck_refuses_f32_and_unknown_layers() {
    let env = Env::new();
    let out = env.qseld(&["--set", "precision=f32", "gradcheck"]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("double precision"));
    assert_eq!(code(&env.qseld(&["gradcheck", "--layer", "lstm"])), 2);
}

#[test]
fn config_errors_exit_two() {
    let env = Env::new();
    for args in [
        &["--set", "train.bogus=1", "gradcheck"][..],
        &["--set", "synth.seed=4", "gradcheck"],
        &["--config", "/nonexistent/config.toml", "gradcheck"],
        &["--threads", "0", "gradcheck"],
    ] {
        assert_eq!(code(&env.qseld(args)), 2, "{args:?}");
    }
}
