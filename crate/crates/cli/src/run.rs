//! Per-run output directories under `runs/<timestamp>-<tag>/`.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::RunConfig;

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates a fresh directory; a numeric suffix is added when a run with
    /// the same timestamp and tag already exists.
    pub fn create(runs_dir: &Path, tag: &str) -> Result<RunDir> {
        fs::create_dir_all(runs_dir).with_context(|| format!("cannot create {}", runs_dir.display()))?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = format!("{stamp}-{}", sanitize(tag));
        for n in 1.. {
            let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
            let path = runs_dir.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path }),
                Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e).with_context(|| format!("cannot create {}", path.display())),
            }
        }
        unreachable!()
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.file(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Saves the resolved configuration; `notes` become leading comments.
    pub fn write_config(&self, cfg: &RunConfig, notes: &[(&str, String)]) -> Result<PathBuf> {
        let mut text = String::new();
        for (k, v) in notes {
            text.push_str(&format!("# {k}: {v}\n"));
        }
        text.push_str(&cfg.to_toml()?);
        self.write("config.toml", text)
    }
}

fn sanitize(tag: &str) -> String {
    let s: String = tag
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect();
    if s.is_empty() { "run".into() } else { s }
}
