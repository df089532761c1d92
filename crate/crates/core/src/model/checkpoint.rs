//! Checkpoint container.
//!
//! ```text
//! magic      "QSELDCKPT\n"
//! u64 LE     manifest length in bytes
//! manifest   JSON: version, config, seed, precision, preprocessing, tensor table
//! blobs      little-endian IEEE-754 tensors, in table order
//! sha256     32 bytes over everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{QseldConfig, QseldModel};
use crate::error::{Error, Result};
use crate::features::FeatureStats;
use crate::optim::adam::{AdamConfig, AdamState};
use crate::params::{named_buffers, named_params, Parameterized};
use crate::precision::Precision;

pub const MAGIC: &[u8] = b"QSELDCKPT\n";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Precision,
    /// Byte offset from the start of the blob section.
    pub offset: u64,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: QseldConfig,
    pub seed: u64,
    pub precision: Precision,
    pub epoch: usize,
    pub preprocessing: FeatureStats,
    pub tensors: Vec<TensorEntry>,
    pub adam: Option<AdamMeta>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: QseldModel,
    pub seed: u64,
    pub precision: Precision,
    /// Training epochs completed.
    pub epoch: usize,
    pub preprocessing: FeatureStats,
    pub adam: Option<AdamState>,
    pub warnings: Vec<String>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(model: QseldModel, seed: u64, precision: Precision, preprocessing: FeatureStats) -> Self {
        Checkpoint { model, seed, precision, epoch: 0, preprocessing, adam: None, warnings: Vec::new() }
    }

    fn tensors(&self) -> Vec<(String, Vec<usize>, Precision, Vec<f64>)> {
        let mut out: Vec<_> = named_params(&self.model)
            .into_iter()
            .chain(named_buffers(&self.model))
            .map(|t| (t.name, t.shape, self.precision, t.data))
            .collect();
        if let Some(a) = &self.adam {
            out.push(("adam.m".into(), vec![a.m.len()], Precision::F64, a.m.clone()));
            out.push(("adam.v".into(), vec![a.v.len()], Precision::F64, a.v.clone()));
        }
        out
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0u64;
        let tensors = self
            .tensors()
            .into_iter()
            .map(|(name, shape, dtype, data)| {
                let e = TensorEntry { name, shape, dtype, offset };
                offset += (data.len() * dtype.bytes()) as u64;
                e
            })
            .collect();
        Manifest {
            format_version: FORMAT_VERSION,
            config: self.model.config.clone(),
            seed: self.seed,
            precision: self.precision,
            epoch: self.epoch,
            preprocessing: self.preprocessing.clone(),
            tensors,
            adam: self.adam.as_ref().map(|a| AdamMeta { config: a.config, step: a.step }),
            warnings: self.warnings.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest()).map_err(|e| ckpt_err(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, _, dtype, data) in self.tensors() {
            for v in data {
                match dtype {
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, mode: Option<Precision>) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, mode)
            .map_err(|e| ckpt_err(format!("{}: {}", path.display(), e.to_string().trim_start_matches("checkpoint error: "))))
    }

    /// Parses and verifies a checkpoint. With `mode` set, parameters are
    /// converted to that precision and any narrowing is recorded as a warning.
    pub fn from_bytes(bytes: &[u8], mode: Option<Precision>) -> Result<Checkpoint> {
        let min = MAGIC.len() + 8 + DIGEST_LEN;
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(ckpt_err("not a checkpoint file (bad magic)"));
        }
        if bytes.len() < min {
            return Err(ckpt_err("truncated checkpoint"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ckpt_err("checksum mismatch: file is corrupted or truncated"));
        }
        let mut len_bytes = [0u8; 8];
        len_bytes.copy_from_slice(&body[MAGIC.len()..MAGIC.len() + 8]);
        let mlen = u64::from_le_bytes(len_bytes) as usize;
        let mstart = MAGIC.len() + 8;
        if mlen > body.len() - mstart {
            return Err(ckpt_err("manifest length exceeds file size"));
        }
        let manifest_value: serde_json::Value =
            serde_json::from_slice(&body[mstart..mstart + mlen]).map_err(|e| ckpt_err(format!("bad manifest: {e}")))?;
        let version = manifest_value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(FORMAT_VERSION)) {
            return Err(ckpt_err(format!(
                "unsupported format version {version:?}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let manifest: Manifest =
            serde_json::from_value(manifest_value).map_err(|e| ckpt_err(format!("bad manifest: {e}")))?;
        let blobs = &body[mstart + mlen..];

        let read = |e: &TensorEntry| -> Result<Vec<f64>> {
            let start = e.offset as usize;
            let end = start + e.len() * e.dtype.bytes();
            let raw = blobs.get(start..end).ok_or_else(|| ckpt_err(format!("tensor {} lies outside the file", e.name)))?;
            Ok(match e.dtype {
                Precision::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
                Precision::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                    .collect(),
            })
        };
        let find = |name: &str| manifest.tensors.iter().find(|e| e.name == name);

        let mut model = QseldModel::new(manifest.config.clone(), 0)?;
        let mut missing = None;
        let mut fill = |name: &str, shape: Option<&[usize]>, dst: &mut [f64]| -> Result<()> {
            let Some(e) = find(name) else {
                missing.get_or_insert_with(|| name.to_string());
                return Ok(());
            };
            if e.len() != dst.len() || shape.is_some_and(|s| s != e.shape.as_slice()) {
                return Err(ckpt_err(format!("tensor {name} has shape {:?}, model expects {} values", e.shape, dst.len())));
            }
            dst.copy_from_slice(&read(e)?);
            Ok(())
        };
        let mut result = Ok(());
        let shapes: Vec<(String, Vec<usize>)> = {
            let mut v = Vec::new();
            model.visit_params("", &mut |n, s, _| v.push((n.to_string(), s.to_vec())));
            model.visit_buffers("", &mut |n, s, _| v.push((n.to_string(), s.to_vec())));
            v
        };
        let mut i = 0;
        let mut visit = |name: &str, dst: &mut [f64]| {
            if result.is_ok() {
                result = fill(name, Some(&shapes[i].1), dst);
            }
            i += 1;
        };
        model.visit_params_mut("", &mut |n, d| visit(n, d));
        model.visit_buffers_mut("", &mut |n, d| visit(n, d));
        result?;
        if let Some(name) = missing {
            return Err(ckpt_err(format!("tensor {name} is missing")));
        }

        let adam = match &manifest.adam {
            Some(meta) => {
                let m = find("adam.m").ok_or_else(|| ckpt_err("optimizer moments are missing"))?;
                let v = find("adam.v").ok_or_else(|| ckpt_err("optimizer moments are missing"))?;
                Some(AdamState { config: meta.config, m: read(m)?, v: read(v)?, step: meta.step })
            }
            None => None,
        };

        let mut warnings = manifest.warnings.clone();
        let precision = mode.unwrap_or(manifest.precision);
        if precision != manifest.precision {
            let msg = format!(
                "precision cast: {} checkpoint loaded in {} mode{}",
                manifest.precision,
                precision,
                if precision == Precision::F32 { "; parameters rounded to f32" } else { "" }
            );
            log::warn!("{msg}");
            warnings.push(msg);
            model.visit_params_mut("", &mut |_, d| precision.round_slice(d));
            model.visit_buffers_mut("", &mut |_, d| precision.round_slice(d));
        }
        Ok(Checkpoint {
            model,
            seed: manifest.seed,
            precision,
            epoch: manifest.epoch,
            preprocessing: manifest.preprocessing,
            adam,
            warnings,
        })
    }
}

/// Reads only the manifest, after verifying the checksum.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let ckpt = Checkpoint::load(path, None)?;
    Ok(ckpt.manifest())
}
