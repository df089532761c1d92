//! Run configuration: defaults, then a TOML file, then `--set` overrides.

use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::Result;
use qseld_core::model::data::ACTIVITY_THRESHOLD;
use qseld_core::model::QseldConfig;
use qseld_core::optim::train::TrainConfig;
use qseld_core::precision::Precision;
use qseld_core::synth::SynthConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const SEED_ENV: &str = "QSELD_SEED";

/// Bad flags, config keys or values. Reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// SED activity threshold on the sigmoid outputs.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { threshold: ACTIVITY_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; `synth.seed` and `train.seed` follow it.
    pub seed: Option<u64>,
    /// Storage precision; `train.precision` follows it.
    pub precision: Precision,
    pub synth: SynthConfig,
    pub model: QseldConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// Builds the resolved configuration. `env_seed` is the value of
/// `QSELD_SEED`, used when no `seed` key is given.
pub fn resolve(file: Option<&Path>, sets: &[String], env_seed: Option<&str>) -> Result<RunConfig> {
    let mut user = Table::new();
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        let table: Table = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        merge(&mut user, table);
    }
    for s in sets {
        let (key, raw) = s.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        set_path(&mut user, key.trim(), parse_value(raw.trim()))?;
    }

    let Value::Table(mut full) = Value::try_from(RunConfig::default())? else {
        unreachable!("a struct serializes to a table")
    };
    merge(&mut full, user.clone());
    let mut cfg: RunConfig = Value::Table(full).try_into().map_err(|e| usage(format!("invalid configuration: {e}")))?;

    let seed = match (cfg.seed, env_seed) {
        (Some(s), _) => s,
        (None, Some(raw)) => raw
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {raw:?}")))?,
        (None, None) => 0,
    };
    if seed > i64::MAX as u64 {
        return Err(usage(format!("seed must be at most {}, got {seed}", i64::MAX)));
    }
    require_same::<u64>(&user, "synth.seed", &seed, "seed")?;
    require_same::<u64>(&user, "train.seed", &seed, "seed")?;
    require_same::<Precision>(&user, "train.precision", &cfg.precision, "precision")?;
    require_same::<f64>(&user, "model.doa_weight", &cfg.train.doa_weight, "train.doa_weight")?;
    cfg.seed = Some(seed);
    cfg.synth.seed = seed;
    cfg.train.seed = seed;
    cfg.train.precision = cfg.precision;
    cfg.model.doa_weight = cfg.train.doa_weight;

    cfg.synth.validate()?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    if !(cfg.eval.threshold > 0.0 && cfg.eval.threshold < 1.0) {
        return Err(usage(format!("eval.threshold must lie in (0, 1), got {}", cfg.eval.threshold)));
    }
    Ok(cfg)
}

/// Keys mirrored from another key may be given only with the same value, so
/// a saved config.toml loads back unchanged.
fn require_same<T>(user: &Table, key: &str, resolved: &T, source: &str) -> Result<()>
where
    T: DeserializeOwned + PartialEq + fmt::Debug,
{
    let Some(v) = get_path(user, key) else { return Ok(()) };
    let given: T = v.clone().try_into().map_err(|e| usage(format!("invalid value for {key}: {e}")))?;
    if &given != resolved {
        return Err(usage(format!(
            "{key} = {given:?} conflicts with {source} = {resolved:?}; {key} follows {source}, set that instead"
        )));
    }
    Ok(())
}

/// A TOML literal when `raw` parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn merge(dst: &mut Table, src: Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(Value::Table(d)), Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

fn set_path(root: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(usage(format!("malformed config key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for p in parents {
        let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = match entry {
            Value::Table(t) => t,
            _ => return Err(usage(format!("config key {key:?}: {p} is not a table"))),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn get_path<'a>(root: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut v = root.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}
