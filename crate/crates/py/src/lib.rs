//! Python bindings. Matrices cross the boundary as nested lists of
//! `complex` (row-major, antennas × devices); vectors as flat lists.

#![allow(clippy::useless_conversion)]

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use leosat_core::augment::{self, ErrorSet as CoreErrorSet, Vae as CoreVae};
use leosat_core::config::Robustness;
use leosat_core::dataset::{ChannelDataset, Provenance};
use leosat_core::harness::{self, pipeline, Scheme};
use leosat_core::linalg::{CMat, CVec};
use leosat_core::nn::checkpoint::Checkpoint;
use leosat_core::precoder::{self, train_dlpcn, Dlpcn};
use leosat_core::predictor::{self, train_dlpdn, Dlpdn, LinearPredictor, SampleSet};
use leosat_core::{Error, RunConfig};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Stage { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Res<T> = PyResult<T>;

fn to_mat(rows: Vec<Vec<Complex64>>) -> Res<CMat> {
    let m = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if m == 0 || k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("expected a non-empty rectangular matrix"));
    }
    Ok(CMat::from_fn(m, k, |i, j| rows[i][j]))
}

fn from_mat(a: &CMat) -> Vec<Vec<Complex64>> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect()
}

fn to_mats(xs: Vec<Vec<Vec<Complex64>>>) -> Res<Vec<CMat>> {
    xs.into_iter().map(to_mat).collect()
}

fn scheme(name: &str) -> Res<Scheme> {
    Scheme::parse(name).map_err(err)
}

/// Full run configuration (system, data and network settings).
#[pyclass(module = "leosat")]
#[derive(Clone)]
struct Config {
    inner: RunConfig,
}

#[pymethods]
impl Config {
    /// Small profile that runs on a laptop.
    #[staticmethod]
    fn desk() -> Self {
        Self { inner: RunConfig::desk() }
    }

    #[staticmethod]
    fn full() -> Self {
        Self { inner: RunConfig::full() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> Res<Self> {
        Ok(Self { inner: RunConfig::from_json_str(text).map_err(err)? })
    }

    fn to_json(&self) -> Res<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Returns a copy with a JSON object merged over this one.
    fn with_overrides(&self, patch: &str) -> Res<Self> {
        let patch: serde_json::Value = serde_json::from_str(patch).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let mut v = serde_json::to_value(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        harness::spec::merge(&mut v, &patch);
        Self::from_json(&v.to_string())
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn antennas(&self) -> usize {
        self.inner.system.antennas
    }

    #[getter]
    fn devices(&self) -> usize {
        self.inner.system.devices
    }

    #[getter]
    fn noise_var(&self) -> f64 {
        self.inner.system.noise_var()
    }

    #[getter]
    fn tx_power(&self) -> f64 {
        self.inner.system.tx_power()
    }

    fn __repr__(&self) -> String {
        format!("Config(M={}, K={}, hash={})", self.inner.system.antennas, self.inner.system.devices, &self.inner.hash()[..16])
    }
}

/// Episodes of true channels H and their MMSE estimates Ĥ.
#[pyclass(module = "leosat")]
struct Dataset {
    inner: ChannelDataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (config, episodes=None, slots=None, seed=0))]
    fn generate(config: &Config, episodes: Option<usize>, slots: Option<usize>, seed: u64) -> Res<Self> {
        let c = &config.inner;
        let inner = ChannelDataset::generate(
            &c.system,
            episodes.unwrap_or(c.data.episodes),
            slots.unwrap_or(c.data.slots_per_episode()),
            seed,
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> Res<Self> {
        Ok(Self { inner: ChannelDataset::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> Res<()> {
        self.inner.save(&path).map_err(err)
    }

    fn export_csv(&self, path: PathBuf) -> Res<()> {
        self.inner.export_csv(&path).map_err(err)
    }

    #[getter]
    fn episodes(&self) -> usize {
        self.inner.episodes.len()
    }

    #[getter]
    fn slots(&self) -> usize {
        self.inner.n_slots
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn xi(&self) -> Vec<Vec<Complex64>> {
        from_mat(&self.inner.xi)
    }

    fn h(&self, episode: usize, slot: usize) -> Res<Vec<Vec<Complex64>>> {
        let ep = self.inner.episodes.get(episode).ok_or_else(|| PyValueError::new_err("episode out of range"))?;
        ep.h.get(slot).map(from_mat).ok_or_else(|| PyValueError::new_err("slot out of range"))
    }

    fn h_hat(&self, episode: usize, slot: usize) -> Res<Vec<Vec<Complex64>>> {
        let ep = self.inner.episodes.get(episode).ok_or_else(|| PyValueError::new_err("episode out of range"))?;
        ep.h_hat.get(slot).map(from_mat).ok_or_else(|| PyValueError::new_err("slot out of range"))
    }

    /// Train/test prediction windows for this dataset.
    fn split(&self, config: &Config) -> Res<(Samples, Samples)> {
        let (a, b) = pipeline::prediction_split(&config.inner, &self.inner, config.inner.predictor.w_step).map_err(err)?;
        Ok((Samples { inner: a }, Samples { inner: b }))
    }
}

/// Prediction windows: histories of Ĥ with their targets.
#[pyclass(module = "leosat")]
struct Samples {
    inner: SampleSet,
}

#[pymethods]
impl Samples {
    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    fn history(&self, i: usize) -> Res<Vec<Vec<Vec<Complex64>>>> {
        let s = self.inner.samples.get(i).ok_or_else(|| PyValueError::new_err("index out of range"))?;
        Ok(s.history.iter().map(from_mat).collect())
    }

    fn target(&self, i: usize) -> Res<Vec<Vec<Complex64>>> {
        let s = self.inner.samples.get(i).ok_or_else(|| PyValueError::new_err("index out of range"))?;
        Ok(from_mat(&s.target))
    }
}

/// Channel predictor: the DLPDN network or the linear baseline.
#[pyclass(module = "leosat")]
struct Predictor {
    model: Model,
}

enum Model {
    Dl(Box<Dlpdn>),
    Lr(LinearPredictor),
}

impl Predictor {
    fn predict_all(&self, samples: &SampleSet) -> Res<Vec<CMat>> {
        match &self.model {
            Model::Dl(d) => d.predict_samples(&samples.samples).map_err(err),
            Model::Lr(l) => samples.samples.iter().map(|s| l.predict(&s.history).map_err(err)).collect(),
        }
    }
}

#[pymethods]
impl Predictor {
    #[staticmethod]
    #[pyo3(signature = (config, train, scheme="dlpdn", seed=None))]
    fn train(config: &Config, train: &Samples, scheme: &str, seed: Option<u64>) -> Res<Self> {
        match self::scheme(scheme)? {
            Scheme::Dlpdn => {
                let mut h = config.inner.predictor.clone();
                if let Some(s) = seed {
                    h.train.seed = s;
                }
                Ok(Self { model: Model::Dl(Box::new(train_dlpdn(&train.inner, &h).map_err(err)?)) })
            }
            Scheme::Lr => Ok(Self { model: Model::Lr(LinearPredictor::fit(&train.inner, config.inner.predictor.ridge).map_err(err)?) }),
            s => Err(PyValueError::new_err(format!("`{}` is not a predictor", s.name()))),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> Res<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| err(e.into()))?;
        if let Ok(lr) = serde_json::from_str::<LinearPredictor>(&text) {
            return Ok(Self { model: Model::Lr(lr) });
        }
        let ck = Checkpoint::from_json(&text).map_err(err)?;
        Ok(Self { model: Model::Dl(Box::new(Dlpdn::from_checkpoint(&ck).map_err(err)?)) })
    }

    fn save(&self, path: PathBuf) -> Res<()> {
        match &self.model {
            Model::Dl(d) => d.checkpoint().and_then(|c| c.save(&path)).map_err(err),
            Model::Lr(l) => {
                let text = serde_json::to_string(l).map_err(|e| PyValueError::new_err(e.to_string()))?;
                std::fs::write(&path, text).map_err(|e| err(e.into()))
            }
        }
    }

    #[getter]
    fn scheme(&self) -> &'static str {
        match &self.model {
            Model::Dl(_) => "dlpdn",
            Model::Lr(_) => "lr",
        }
    }

    /// Predicts H̃ from a history of Ĥ, most recent first.
    fn predict(&self, history: Vec<Vec<Vec<Complex64>>>) -> Res<Vec<Vec<Complex64>>> {
        let h = to_mats(history)?;
        let out = match &self.model {
            Model::Dl(d) => d.predict(&h),
            Model::Lr(l) => l.predict(&h),
        };
        out.map(|m| from_mat(&m)).map_err(err)
    }

    fn predict_samples(&self, samples: &Samples) -> Res<Vec<Vec<Vec<Complex64>>>> {
        Ok(self.predict_all(&samples.inner)?.iter().map(from_mat).collect())
    }

    /// Mean per-sample NMSE against the targets.
    fn nmse(&self, samples: &Samples) -> Res<f64> {
        let preds = self.predict_all(&samples.inner)?;
        predictor::mean_nmse(&samples.inner.samples, &preds).map_err(err)
    }

    /// Prediction errors Ĥ − H̃, one vector per (sample, device).
    fn errors(&self, samples: &Samples, config: &Config, seed: u64) -> Res<ErrorSet> {
        let preds = self.predict_all(&samples.inner)?;
        let e = pipeline::prediction_error_vectors(&samples.inner.samples, &preds);
        Ok(ErrorSet { inner: CoreErrorSet::new(Provenance::Prediction, seed, config.inner.system.clone(), e).map_err(err)? })
    }
}

/// A set of complex error vectors of length M.
#[pyclass(module = "leosat")]
#[derive(Clone)]
struct ErrorSet {
    inner: CoreErrorSet,
}

#[pymethods]
impl ErrorSet {
    /// Channel-estimation errors e1 drawn from the MMSE error statistics.
    #[staticmethod]
    fn estimation(config: &Config, n: usize, seed: u64) -> Res<Self> {
        Ok(Self { inner: augment::estimation_error_set(&config.inner.system, n, seed).map_err(err)? })
    }

    /// Isotropic Gaussian errors with the entry power of `like`.
    #[staticmethod]
    fn gaussian(config: &Config, like: &ErrorSet, n: usize, seed: u64) -> Res<Self> {
        let m = config.inner.system.antennas;
        let cov = CMat::identity(m, m) * Complex64::new(like.inner.entry_power(), 0.0);
        Ok(Self { inner: augment::gaussian_error_set(&config.inner.system, &cov, n, seed).map_err(err)? })
    }

    /// e = e1 + ξ·e2.
    #[staticmethod]
    fn compose(e1: &ErrorSet, e2: &ErrorSet, xi: Vec<Vec<Complex64>>, n: usize, seed: u64) -> Res<Self> {
        Ok(Self { inner: augment::compose_error_set(&e1.inner, &e2.inner, &to_mat(xi)?, n, seed).map_err(err)? })
    }

    #[staticmethod]
    fn from_vectors(config: &Config, vectors: Vec<Vec<Complex64>>) -> Res<Self> {
        let v = vectors.into_iter().map(CVec::from_vec).collect();
        Ok(Self { inner: CoreErrorSet::new(Provenance::None, 0, config.inner.system.clone(), v).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> Res<Self> {
        Ok(Self { inner: CoreErrorSet::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> Res<()> {
        self.inner.save(&path).map_err(err)
    }

    fn export_csv(&self, path: PathBuf) -> Res<()> {
        self.inner.export_csv(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn entry_power(&self) -> f64 {
        self.inner.entry_power()
    }

    fn vectors(&self) -> Vec<Vec<Complex64>> {
        self.inner.errors.iter().map(|e| e.iter().copied().collect()).collect()
    }
}

/// Variational autoencoder over prediction-error vectors.
#[pyclass(module = "leosat")]
struct Vae {
    inner: CoreVae,
}

#[pymethods]
impl Vae {
    #[staticmethod]
    #[pyo3(signature = (config, errors, seed=None))]
    fn train(config: &Config, errors: &ErrorSet, seed: Option<u64>) -> Res<Self> {
        let mut h = config.inner.vae.clone();
        if let Some(s) = seed {
            h.train.seed = s;
        }
        Ok(Self { inner: augment::train_vae(&errors.inner, &h).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> Res<Self> {
        let ck = Checkpoint::load(&path).map_err(err)?;
        Ok(Self { inner: CoreVae::from_checkpoint(&ck).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> Res<()> {
        self.inner.checkpoint().and_then(|c| c.save(&path)).map_err(err)
    }

    fn generate(&self, config: &Config, n: usize, seed: u64) -> Res<ErrorSet> {
        Ok(ErrorSet { inner: self.inner.generate(&config.inner.system, n, seed).map_err(err)? })
    }

    #[getter]
    fn best_val(&self) -> Option<f64> {
        self.inner.report.as_ref().map(|r| r.best_val)
    }
}

/// Learned precoder (DLPCN or the MLP variant).
#[pyclass(module = "leosat")]
struct Precoder {
    inner: Dlpcn,
}

#[pymethods]
impl Precoder {
    /// Trains on predicted channels. Without `errors` the non-robust
    /// objective is used.
    #[staticmethod]
    #[pyo3(signature = (config, h_tilde, xi, errors=None, scheme="dlpcn", seed=None))]
    fn train(
        config: &Config,
        h_tilde: Vec<Vec<Vec<Complex64>>>,
        xi: Vec<Vec<Complex64>>,
        errors: Option<&ErrorSet>,
        scheme: &str,
        seed: Option<u64>,
    ) -> Res<Self> {
        let s = self::scheme(scheme)?;
        if !s.is_learned_precoder() {
            return Err(PyValueError::new_err(format!("`{scheme}` is not a learned precoder")));
        }
        let sys = &config.inner.system;
        let mut h = pipeline::precoder_variant(&config.inner, s);
        if let Some(v) = seed {
            h.train.seed = v;
        }
        let zero;
        let set = match errors {
            Some(e) if h.robustness != Robustness::NonRobust => &e.inner,
            _ => {
                h.robustness = Robustness::NonRobust;
                zero = CoreErrorSet::new(Provenance::None, 0, sys.clone(), vec![CVec::zeros(sys.antennas)]).map_err(err)?;
                &zero
            }
        };
        let net = train_dlpcn(sys, &to_mats(h_tilde)?, &to_mat(xi)?, set, &h).map_err(err)?;
        Ok(Self { inner: net })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> Res<Self> {
        let ck = Checkpoint::load(&path).map_err(err)?;
        Ok(Self { inner: Dlpcn::from_checkpoint(&ck).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> Res<()> {
        self.inner.checkpoint().and_then(|c| c.save(&path)).map_err(err)
    }

    fn precode(&self, h_tilde: Vec<Vec<Complex64>>) -> Res<Vec<Vec<Complex64>>> {
        self.inner.precode(&to_mat(h_tilde)?).map(|w| from_mat(&w)).map_err(err)
    }

    #[getter]
    fn best_val(&self) -> Option<f64> {
        self.inner.report.as_ref().map(|r| r.best_val)
    }
}

/// NMSE ‖a − b‖² / ‖a‖².
#[pyfunction]
fn nmse(a: Vec<Vec<Complex64>>, b: Vec<Vec<Complex64>>) -> Res<f64> {
    predictor::nmse(&to_mat(a)?, &to_mat(b)?).map_err(err)
}

/// Zero-forcing precoder with equal power per beam.
#[pyfunction]
fn zfbf(h: Vec<Vec<Complex64>>, power: f64) -> Res<Vec<Vec<Complex64>>> {
    precoder::zfbf(&to_mat(h)?, power).map(|(w, _)| from_mat(&w)).map_err(err)
}

#[pyfunction]
fn sinr(h: Vec<Vec<Complex64>>, w: Vec<Vec<Complex64>>, noise: f64) -> Res<Vec<f64>> {
    Ok(precoder::sinr_all(&to_mat(h)?, &to_mat(w)?, noise))
}

#[pyfunction]
fn wsr(h: Vec<Vec<Complex64>>, w: Vec<Vec<Complex64>>, weights: Vec<f64>, noise: f64) -> Res<f64> {
    precoder::wsr(&to_mat(h)?, &to_mat(w)?, &weights, noise).map_err(err)
}

/// Runs the cached end-to-end pipeline and returns its metric rows.
#[pyfunction]
#[pyo3(signature = (config, schemes, seed, cache_dir))]
fn run_pipeline<'py>(py: Python<'py>, config: &Config, schemes: Vec<String>, seed: u64, cache_dir: PathBuf) -> Res<Vec<Bound<'py, PyDict>>> {
    let schemes = schemes.iter().map(|s| scheme(s)).collect::<Res<Vec<_>>>()?;
    let cfg = config.inner.clone();
    let out = py.allow_threads(|| harness::run_pipeline(&cfg, &schemes, seed, &cache_dir)).map_err(err)?;
    out.rows
        .iter()
        .map(|r| {
            let d = PyDict::new_bound(py);
            d.set_item("scheme", &r.scheme)?;
            d.set_item("metric", &r.metric)?;
            d.set_item("value", r.value)?;
            d.set_item("seed", r.seed)?;
            Ok(d)
        })
        .collect()
}

/// Median forward-pass wall time in ms per antenna count.
#[pyfunction]
#[pyo3(signature = (config, scheme, sizes, calls=harness::timing::MIN_CALLS, seed=0))]
fn time_scheme(py: Python<'_>, config: &Config, scheme: &str, sizes: Vec<usize>, calls: usize, seed: u64) -> Res<Vec<(usize, usize, f64)>> {
    let s = self::scheme(scheme)?;
    let cfg = config.inner.clone();
    let rows = py.allow_threads(|| harness::time_scheme(&cfg, s, &sizes, calls, seed)).map_err(err)?;
    Ok(rows.iter().map(|r| (r.antennas, r.devices, r.median_ms)).collect())
}

#[pymodule]
fn leosat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Samples>()?;
    m.add_class::<Predictor>()?;
    m.add_class::<ErrorSet>()?;
    m.add_class::<Vae>()?;
    m.add_class::<Precoder>()?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(zfbf, m)?)?;
    m.add_function(wrap_pyfunction!(sinr, m)?)?;
    m.add_function(wrap_pyfunction!(wsr, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(time_scheme, m)?)?;
    m.add("CODE_VERSION", harness::CODE_VERSION)?;
    Ok(())
}
