//! Python bindings. Matrices cross the boundary as lists of rows and
//! packed codes as `bytes`.

use std::str::FromStr;

use eet_core::config::Config as CoreConfig;
use eet_core::ctp::{self, PruneSchedule as CoreSchedule};
use eet_core::hashopt::{self, CodeProblem};
use eet_core::losses;
use eet_core::profile::CostReport;
use eet_core::retrieval::{self, ApNormalizer, BinaryCodeSet, EvalOptions};
use eet_core::vit::{self, Image, ModelWeights, ViTConfig as CoreViT};
use eet_core::{EetError, Matrix};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn err(e: EetError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    let n = rows.len();
    Matrix::from_vec(n, cols, rows.concat()).map_err(err)
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

#[pyclass(name = "ViTConfig", module = "eet")]
#[derive(Clone)]
struct PyViTConfig {
    inner: CoreViT,
}

#[pymethods]
impl PyViTConfig {
    /// `profile` is `tiny-32` or `small-224`.
    #[new]
    #[pyo3(signature = (profile = "tiny-32"))]
    fn new(profile: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreViT::profile(profile).map_err(err)?,
        })
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.image_size
    }
    #[getter]
    fn patch_size(&self) -> usize {
        self.inner.patch_size
    }
    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels
    }
    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth
    }
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }
    #[getter]
    fn heads(&self) -> usize {
        self.inner.heads
    }
    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }
    #[getter]
    fn hash_bits(&self) -> usize {
        self.inner.hash_bits
    }
    #[getter]
    fn num_patches(&self) -> usize {
        self.inner.num_patches()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "PruneSchedule", module = "eet")]
#[derive(Clone)]
struct PySchedule {
    inner: CoreSchedule,
}

#[pymethods]
impl PySchedule {
    /// Parses `"4:0.5,8:0.5,10:0.25"`; `"none"` or `""` disables pruning.
    #[new]
    #[pyo3(signature = (spec = "4:0.5,8:0.5,10:0.25"))]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreSchedule::from_str(spec).map_err(err)?,
        })
    }

    fn stages(&self) -> Vec<(usize, f64)> {
        self.inner.stages().iter().map(|s| (s.layer, s.keep_ratio)).collect()
    }

    fn layer_token_counts(&self, patches: usize, depth: usize) -> Vec<usize> {
        self.inner.layer_token_counts(patches, depth)
    }
}

#[pyclass(name = "Model", module = "eet")]
struct PyModel {
    cfg: CoreViT,
    weights: ModelWeights,
}

#[pymethods]
impl PyModel {
    /// Seeded random weights.
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyViTConfig, seed: u64) -> Self {
        Self {
            cfg: config.inner.clone(),
            weights: ModelWeights::random(&config.inner, seed),
        }
    }

    /// Loads an EETW weights file.
    #[staticmethod]
    fn load(config: &PyViTConfig, path: &str) -> PyResult<Self> {
        let file = eet_core::formats::open(path.as_ref()).map_err(err)?;
        let tensors = eet_core::formats::read_weights(file).map_err(err)?;
        Ok(Self {
            cfg: config.inner.clone(),
            weights: ModelWeights::from_tensors(&config.inner, tensors).map_err(err)?,
        })
    }

    /// Runs the encoder on a normalized HWC image given as a flat list and
    /// returns a dict with `class_embedding`, `importance`, `layer_tokens`,
    /// `stage_patches`, `logits` and `hash`.
    fn encode<'py>(&self, py: Python<'py>, pixels: Vec<f64>, schedule: &PySchedule) -> PyResult<Bound<'py, PyDict>> {
        let s = self.cfg.image_size;
        let image = Image::new(s, s, self.cfg.channels, pixels).map_err(err)?;
        let enc = vit::encode(&image, &self.weights, &self.cfg, &schedule.inner).map_err(err)?;
        let (logits, hash) = vit::heads(&enc.class_embedding, &self.weights.head).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("class_embedding", enc.class_embedding)?;
        d.set_item("importance", enc.importance)?;
        d.set_item("layer_tokens", enc.layer_tokens)?;
        d.set_item("stage_patches", enc.stage_patches)?;
        d.set_item("logits", logits)?;
        d.set_item("hash", hash)?;
        Ok(d)
    }
}

/// Analytic multiply-accumulate count of one encoder pass plus heads.
#[pyfunction]
fn cost<'py>(py: Python<'py>, config: &PyViTConfig, schedule: &PySchedule) -> PyResult<Bound<'py, PyDict>> {
    let r = CostReport::new(&config.inner, &schedule.inner).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("macs", r.macs())?;
    d.set_item("flops", r.flops())?;
    d.set_item("gmacs", r.gmacs())?;
    d.set_item("token_trace", r.token_trace())?;
    Ok(d)
}

#[pyfunction]
fn keep_count(alive: usize, keep_ratio: f64) -> usize {
    ctp::keep_count(alive, keep_ratio)
}

/// Alternating code optimization. Returns `(codes, objective_trace)` with
/// codes as n rows of ±1.
#[pyfunction]
#[pyo3(signature = (labels, num_classes, k, alpha = 1.0, seed = 0, max_iters = 50))]
fn optimize_codes(
    labels: Vec<usize>,
    num_classes: usize,
    k: usize,
    alpha: f64,
    seed: u64,
    max_iters: usize,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut problem = CodeProblem::from_labels(&labels, num_classes, k, alpha).map_err(err)?;
    problem.max_iters = max_iters;
    let state = hashopt::solve(&problem, seed).map_err(err)?;
    Ok((to_rows(&state.b.transpose()), state.objective_trace))
}

/// Packs the signs of `h` (positive → 1), LSB first.
#[pyfunction]
fn binarize<'py>(py: Python<'py>, h: Vec<f64>) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &retrieval::binarize(&h))
}

#[pyfunction]
fn hamming(a: &[u8], b: &[u8], k: usize) -> PyResult<u32> {
    retrieval::hamming(a, b, k).map_err(err)
}

/// mAP and the 11-point PR curve of real-valued or ±1 code rows.
#[pyfunction]
#[pyo3(signature = (queries, query_labels, db, db_labels, q_cutoff = None, exclude_self = false, normalizer = "within_cutoff"))]
fn evaluate(
    queries: Vec<Vec<f64>>,
    query_labels: Vec<u32>,
    db: Vec<Vec<f64>>,
    db_labels: Vec<u32>,
    q_cutoff: Option<usize>,
    exclude_self: bool,
    normalizer: &str,
) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let q = BinaryCodeSet::from_real(&matrix(queries)?, query_labels).map_err(err)?;
    let d = BinaryCodeSet::from_real(&matrix(db)?, db_labels).map_err(err)?;
    let opts = EvalOptions {
        q_cutoff,
        exclude_self,
        normalizer: ApNormalizer::from_str(normalizer).map_err(err)?,
    };
    let r = retrieval::evaluate(&q, &d, &opts).map_err(err)?;
    Ok((r.map, r.pr_curve))
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    losses::cosine(&a, &b).map_err(err)
}

#[pyfunction]
fn dkt_loss(student: Vec<f64>, teacher: Vec<f64>) -> PyResult<f64> {
    losses::dkt_loss(&student, &teacher).map_err(err)
}

#[pyfunction]
fn cross_entropy(logits: Vec<f64>, label: usize) -> PyResult<f64> {
    losses::cross_entropy(&logits, label).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (l_hash, l_cls, l_drg, l_dkt, beta = 0.1, sigma = 1.0))]
fn total_loss(l_hash: f64, l_cls: f64, l_drg: f64, l_dkt: f64, beta: f64, sigma: f64) -> PyResult<f64> {
    let w = losses::LossWeights::new(beta, sigma).map_err(err)?;
    Ok(losses::total_loss(l_hash, l_cls, l_drg, l_dkt, w))
}

/// Parses `key = value` config text and returns the resolved model profile
/// name and seed, or raises on any invalid key.
#[pyfunction]
fn parse_config(text: &str) -> PyResult<(String, u64)> {
    let cfg = CoreConfig::from_str(text).map_err(err)?;
    Ok((cfg.profile_name, cfg.seed))
}

#[pymodule]
fn eet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyViTConfig>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(cost, m)?)?;
    m.add_function(wrap_pyfunction!(keep_count, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_codes, m)?)?;
    m.add_function(wrap_pyfunction!(binarize, m)?)?;
    m.add_function(wrap_pyfunction!(hamming, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(dkt_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    Ok(())
}
