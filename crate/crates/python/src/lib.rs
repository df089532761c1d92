//! Python bindings: quaternion algebra, feature extraction, dataset
//! synthesis, training, evaluation, prediction and gradient checks.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use qseld_core::features::stft_all_frames;
use qseld_core::metrics::{seld_scores as core_seld_scores, MetricReport};
use qseld_core::model::checkpoint::Checkpoint;
use qseld_core::model::data::{evaluate as core_evaluate, extract_all, standardize, ACTIVITY_THRESHOLD};
use qseld_core::model::{Frontend, QseldConfig, QseldModel};
use qseld_core::optim::gradcheck::GradTarget;
use qseld_core::optim::train::{train as core_train, TrainConfig};
use qseld_core::precision::Precision;
use qseld_core::synth::{load_dataset, read_wav, synth_dataset as core_synth_dataset, Split, SynthConfig};
use qseld_core::{Error, QuatTensor};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Wav { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> PyResult<T> {
    s.parse().map_err(|_| PyValueError::new_err(format!("invalid {what} {s:?}")))
}

fn frontend(name: &str) -> PyResult<Frontend> {
    match name {
        "quaternion" => Ok(Frontend::Quaternion),
        "real" => Ok(Frontend::Real),
        _ => Err(PyValueError::new_err(format!("frontend must be 'quaternion' or 'real', got {name:?}"))),
    }
}

/// A quaternion `w + x i + y j + z k`.
#[pyclass(from_py_object, module = "qseld")]
#[derive(Clone, Copy)]
struct Quaternion {
    inner: qseld_core::Quaternion,
}

impl From<qseld_core::Quaternion> for Quaternion {
    fn from(inner: qseld_core::Quaternion) -> Self {
        Quaternion { inner }
    }
}

#[pymethods]
impl Quaternion {
    #[new]
    #[pyo3(signature = (w=0.0, x=0.0, y=0.0, z=0.0))]
    fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        qseld_core::Quaternion::new(w, x, y, z).into()
    }

    #[getter]
    fn w(&self) -> f64 {
        self.inner.w
    }
    #[getter]
    fn x(&self) -> f64 {
        self.inner.x
    }
    #[getter]
    fn y(&self) -> f64 {
        self.inner.y
    }
    #[getter]
    fn z(&self) -> f64 {
        self.inner.z
    }

    #[allow(clippy::wrong_self_convention)]
    fn to_tuple(&self) -> (f64, f64, f64, f64) {
        let q = self.inner;
        (q.w, q.x, q.y, q.z)
    }

    fn conjugate(&self) -> Self {
        self.inner.conjugate().into()
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    /// Real 4×4 matrix `L(q)` with `L(q) p = q ⊗ p`.
    fn left_matrix(&self) -> Vec<Vec<f64>> {
        self.inner.left_matrix().iter().map(|r| r.to_vec()).collect()
    }

    fn __mul__(&self, other: Quaternion) -> Self {
        (self.inner * other.inner).into()
    }

    fn __add__(&self, other: Quaternion) -> Self {
        (self.inner + other.inner).into()
    }

    fn __sub__(&self, other: Quaternion) -> Self {
        (self.inner - other.inner).into()
    }

    fn __neg__(&self) -> Self {
        (-self.inner).into()
    }

    fn __eq__(&self, other: Quaternion) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let q = self.inner;
        format!("Quaternion({}, {}, {}, {})", q.w, q.x, q.y, q.z)
    }
}

/// Hamilton product `p ⊗ q`.
#[pyfunction]
fn hamilton_product(p: Quaternion, q: Quaternion) -> Quaternion {
    qseld_core::hamilton_product(p.inner, q.inner).into()
}

/// Real `4·out × 4·in` matrix equivalent to a quaternion weight matrix given
/// as rows of quaternions.
#[pyfunction]
fn to_real_block(weights: Vec<Vec<Quaternion>>) -> PyResult<Vec<Vec<f64>>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if weights.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("all rows must have the same length"));
    }
    let flat: Vec<_> = weights.iter().flatten().map(|q| q.inner).collect();
    let t = QuatTensor::from_quaternions(&[rows, cols], &flat).map_err(to_py)?;
    let m = qseld_core::to_real_block(&t).map_err(to_py)?;
    Ok(m.data.chunks(m.cols.max(1)).map(<[f64]>::to_vec).collect())
}

/// Magnitude and phase features of 4-channel audio as a `T × M/2 × 8`
/// nested list (planes `|W| |X| |Y| |Z| ∠W ∠X ∠Y ∠Z`).
#[pyfunction]
#[pyo3(signature = (audio, window=64, sample_rate=8000))]
fn stft_features(audio: Vec<Vec<f64>>, window: usize, sample_rate: u32) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let audio: [Vec<f64>; 4] =
        audio.try_into().map_err(|_| PyValueError::new_err("audio must have exactly 4 channels (W, X, Y, Z)"))?;
    let f = stft_all_frames(&audio, window, sample_rate).map_err(to_py)?;
    Ok((0..f.frames)
        .map(|t| (0..f.bins).map(|b| (0..f.planes.len()).map(|p| f.get(t, b, p)).collect()).collect())
        .collect())
}

/// `(S_SED, S_DOA, S_SELD)` from ER, F, DOA error in degrees and K.
#[pyfunction]
fn seld_scores(er: f64, f: f64, doa_err: f64, k: f64) -> (f64, f64, f64) {
    core_seld_scores(er, f, doa_err, k)
}

/// Writes a synthetic B-format dataset and returns the number of clips.
#[pyfunction]
#[pyo3(signature = (path, n_clips=20, classes=3, overlap=1, seed=0, clip_seconds=2.0, sample_rate=8000, window=64))]
#[allow(clippy::too_many_arguments)]
fn synth_dataset(
    py: Python<'_>,
    path: PathBuf,
    n_clips: usize,
    classes: usize,
    overlap: usize,
    seed: u64,
    clip_seconds: f64,
    sample_rate: u32,
    window: usize,
) -> PyResult<usize> {
    let cfg = SynthConfig { n_clips, classes, overlap, seed, clip_seconds, sample_rate, window, ..SynthConfig::default() };
    let meta = py.detach(|| core_synth_dataset(&cfg, &path)).map_err(to_py)?;
    Ok(meta.clips.len())
}

fn metric_pairs(r: &MetricReport) -> Vec<(&'static str, f64)> {
    ["ER", "F", "DOA_err", "K", "S_SED", "S_DOA", "S_SELD"].into_iter().zip(r.values()).collect()
}

fn to_dict<'py>(py: Python<'py>, pairs: &[(&str, f64)]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in pairs {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// Probabilities `[T][N]`, activity `[T][N]` and directions `[T][N][3]`.
type FramePredictions = (Vec<Vec<f64>>, Vec<Vec<bool>>, Vec<Vec<[f64; 3]>>);

/// A network together with its feature standardization, as stored in a
/// checkpoint.
#[pyclass(module = "qseld")]
struct Model {
    ckpt: Checkpoint,
}

#[pymethods]
impl Model {
    /// Freshly initialized model from a preset (`desk`, `paper`, `gradcheck`).
    #[new]
    #[pyo3(signature = (preset="desk", seed=0, frontend="quaternion"))]
    fn new(preset: &str, seed: u64, frontend: &str) -> PyResult<Self> {
        let config = QseldConfig { frontend: self::frontend(frontend)?, ..QseldConfig::preset(preset).map_err(to_py)? };
        let model = QseldModel::new(config, seed).map_err(to_py)?;
        Ok(Model { ckpt: Checkpoint::new(model, seed, Precision::F64, Default::default()) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model { ckpt: Checkpoint::load(&path, None).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ckpt.save(&path).map_err(to_py)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.ckpt.model.param_count()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.ckpt.epoch
    }

    /// Model configuration as a JSON string.
    #[getter]
    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.ckpt.model.config).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Per-frame class probabilities `[T][N]` and directions `[T][N][3]` for
    /// a 4-channel WAV file, plus thresholded activity.
    #[pyo3(signature = (path, threshold=ACTIVITY_THRESHOLD))]
    fn predict_wav(
        &self,
        py: Python<'_>,
        path: PathBuf,
        threshold: f64,
    ) -> PyResult<FramePredictions> {
        let c = &self.ckpt;
        let p = py
            .detach(|| {
                let (audio, sr) = read_wav(&path)?;
                let mut f = stft_all_frames(&audio, c.model.config.window, sr)?;
                c.preprocessing.apply(&mut f);
                f.round(c.precision);
                c.model.predict(&f)
            })
            .map_err(to_py)?;
        let n = p.classes;
        let active = p.activity(threshold);
        let probs = p.probs.chunks(n).map(<[f64]>::to_vec).collect();
        let act = active.chunks(n).map(<[bool]>::to_vec).collect();
        let doa = p.doa.chunks(3 * n).map(|r| r.chunks(3).map(|d| [d[0], d[1], d[2]]).collect()).collect();
        Ok((probs, act, doa))
    }

    /// SELD metrics on one split (`train`, `test` or `all`) of a dataset.
    #[pyo3(signature = (data, split="test", threshold=ACTIVITY_THRESHOLD))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        data: PathBuf,
        split: &str,
        threshold: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.ckpt;
        let report = py
            .detach(|| {
                let ds = load_dataset(&data)?;
                if ds.meta.window != c.model.config.window || ds.meta.classes != c.model.config.classes {
                    return Err(Error::Config(format!(
                        "model expects window {} and {} classes, dataset has window {} and {} classes",
                        c.model.config.window, c.model.config.classes, ds.meta.window, ds.meta.classes
                    )));
                }
                let clips = match split {
                    "train" => ds.split(Split::Train),
                    "test" => ds.split(Split::Test),
                    "all" => ds.clips.iter().collect(),
                    other => return Err(Error::Config(format!("split must be train, test or all, got {other:?}"))),
                };
                let mut d = extract_all(&clips, ds.meta.window)?;
                standardize(&mut d, &c.preprocessing, c.precision);
                core_evaluate(&c.model, &d, threshold)
            })
            .map_err(to_py)?;
        to_dict(py, &metric_pairs(&report))
    }

    fn __repr__(&self) -> String {
        let cfg = &self.ckpt.model.config;
        format!(
            "Model(frontend={:?}, filters={}, window={}, classes={}, params={})",
            cfg.frontend,
            cfg.filters,
            cfg.window,
            cfg.classes,
            self.ckpt.model.param_count()
        )
    }
}

/// Trains a preset model on the train split of a dataset. Returns the best
/// model (by validation S_SELD) and one dict of losses and metrics per epoch.
#[pyfunction]
#[pyo3(signature = (data, epochs=300, seed=0, preset="desk", frontend="quaternion", lr=1e-3, precision="f64"))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    data: PathBuf,
    epochs: usize,
    seed: u64,
    preset: &str,
    frontend: &str,
    lr: f64,
    precision: &str,
) -> PyResult<(Model, Vec<Bound<'py, PyDict>>)> {
    let config = QseldConfig { frontend: self::frontend(frontend)?, ..QseldConfig::preset(preset).map_err(to_py)? };
    let tc = TrainConfig { epochs, seed, lr, precision: parse::<Precision>("precision", precision)?, ..Default::default() };
    let outcome = py
        .detach(|| {
            let ds = load_dataset(&data)?;
            let clips = extract_all(&ds.split(Split::Train), config.window)?;
            core_train(QseldModel::new(config, seed)?, &clips, &tc)
        })
        .map_err(to_py)?;
    if let Some(msg) = outcome.diverged {
        return Err(PyRuntimeError::new_err(format!("training diverged at {msg}")));
    }
    let log = outcome
        .log
        .records
        .iter()
        .map(|r| {
            let mut row = vec![
                ("epoch", r.epoch as f64),
                ("train_loss", r.train_loss),
                ("train_sed", r.train_sed),
                ("train_doa", r.train_doa),
                ("val_loss", r.val_loss),
            ];
            row.extend(metric_pairs(&r.val));
            to_dict(py, &row)
        })
        .collect::<PyResult<_>>()?;
    Ok((Model { ckpt: outcome.best }, log))
}

/// Finite-difference gradient check; maps each target to its largest
/// relative error.
#[pyfunction]
#[pyo3(signature = (layer=None, seed=0))]
fn gradcheck<'py>(py: Python<'py>, layer: Option<&str>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let targets = match layer {
        Some(name) => vec![GradTarget::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown layer {name:?}")))?],
        None => GradTarget::ALL.to_vec(),
    };
    let pairs = py
        .detach(|| targets.into_iter().map(|t| Ok((t.name(), t.run(seed)?.max_rel_err))).collect::<Result<Vec<_>, Error>>())
        .map_err(to_py)?;
    to_dict(py, &pairs)
}

#[pymodule]
fn qseld(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Quaternion>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(hamilton_product, m)?)?;
    m.add_function(wrap_pyfunction!(to_real_block, m)?)?;
    m.add_function(wrap_pyfunction!(stft_features, m)?)?;
    m.add_function(wrap_pyfunction!(seld_scores, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
