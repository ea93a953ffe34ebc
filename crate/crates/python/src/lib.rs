//! Python bindings: mixture fitting, Fisher encoding, binary embeddings,
//! Hamming retrieval, t-SNE, evaluation metrics and the full pipeline.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use drcodes::descriptors::DescriptorSet;
use drcodes::disksynth::{self, DatasetSpec, RIG_ILLUMINATION_ANGLES};
use drcodes::embed::{self, encode_binary, itq_fit, Embedding as CoreEmbedding, ProjectionModel};
use drcodes::encode::{fisher_encode, Normalization};
use drcodes::eval::{self, PipelineConfig};
use drcodes::gmm::{gmm_fit, GmmModel as CoreGmm};
use drcodes::index::HashIndex as CoreIndex;
use drcodes::regressor::{net_forward, net_train, RegressionNet as CoreNet};
use drcodes::tsne::{tsne_embed, TsneInput, TsneParams};
use drcodes::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for drcodes::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn descriptor_set(rows: Vec<Vec<f64>>) -> PyResult<DescriptorSet> {
    let n = rows.len();
    DescriptorSet::from_vectors(rows, vec![(0.0, 0.0); n], "python").py()
}

/// Diagonal-covariance Gaussian mixture.
#[pyclass(module = "drcodes")]
struct GmmModel {
    inner: CoreGmm,
}

#[pymethods]
impl GmmModel {
    #[staticmethod]
    #[pyo3(signature = (data, k, seed=0, max_iter=100, tol=1e-5))]
    fn fit(data: Vec<Vec<f64>>, k: usize, seed: u64, max_iter: usize, tol: f64) -> PyResult<Self> {
        Ok(Self { inner: gmm_fit(&data, k, seed, max_iter, tol).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: CoreGmm::load(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.means.clone()
    }

    #[getter]
    fn variances(&self) -> Vec<Vec<f64>> {
        self.inner.variances.clone()
    }

    #[getter]
    fn loglik_trace(&self) -> Vec<f64> {
        self.inner.loglik_trace.clone()
    }

    fn posteriors(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.posteriors(&v).py()
    }

    /// Fisher vector of a bag of descriptors; `normalization` is "improved" or "raw".
    #[pyo3(signature = (descriptors, normalization="improved"))]
    fn fisher_vector(&self, descriptors: Vec<Vec<f64>>, normalization: &str) -> PyResult<Vec<f64>> {
        let norm = match normalization {
            "improved" => Normalization::Improved,
            "raw" => Normalization::Raw,
            other => return Err(PyValueError::new_err(format!("unknown normalization `{other}`"))),
        };
        Ok(fisher_encode(&self.inner, &descriptor_set(descriptors)?, norm).py()?.values)
    }

    fn __repr__(&self) -> String {
        format!("GmmModel(k={}, dim={})", self.inner.k(), self.inner.dim())
    }
}

/// A packed sign code tagged with the embedding that produced it.
#[pyclass(module = "drcodes")]
struct BinaryCode {
    inner: embed::BinaryCode,
}

#[pymethods]
impl BinaryCode {
    #[new]
    #[pyo3(signature = (bits, embedding_id=""))]
    fn new(bits: Vec<bool>, embedding_id: &str) -> Self {
        Self { inner: embed::BinaryCode::from_bits(&bits, embedding_id) }
    }

    #[getter]
    fn bit_count(&self) -> usize {
        self.inner.bit_count()
    }

    #[getter]
    fn embedding_id(&self) -> String {
        self.inner.embedding_id.clone()
    }

    fn bits(&self) -> Vec<bool> {
        self.inner.bits()
    }

    fn count_ones(&self) -> u32 {
        self.inner.count_ones()
    }

    fn hamming(&self, other: &BinaryCode) -> PyResult<u32> {
        embed::hamming(&self.inner, &other.inner).py()
    }

    fn __len__(&self) -> usize {
        self.inner.bit_count()
    }

    fn __eq__(&self, other: &BinaryCode) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("BinaryCode(bits={}, ones={})", self.inner.bit_count(), self.inner.count_ones())
    }
}

/// Random-projection hashing, optionally with a learned rotation.
#[pyclass(module = "drcodes")]
struct Embedding {
    inner: CoreEmbedding,
}

#[pymethods]
impl Embedding {
    #[staticmethod]
    #[pyo3(signature = (input_dim, bits=1024, seed=0))]
    fn lsh(input_dim: usize, bits: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: CoreEmbedding::Lsh(ProjectionModel::new(input_dim, bits, seed).py()?) })
    }

    #[staticmethod]
    #[pyo3(signature = (data, bits=1024, iters=50, seed=0))]
    fn itq(data: Vec<Vec<f64>>, bits: usize, iters: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: CoreEmbedding::Itq(itq_fit(&data, bits, iters, seed).py()?) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: CoreEmbedding::load(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn embedding_id(&self) -> String {
        self.inner.embedding_id()
    }

    #[getter]
    fn bits(&self) -> usize {
        self.inner.bits()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn encode(&self, x: Vec<f64>) -> PyResult<BinaryCode> {
        Ok(BinaryCode { inner: encode_binary(&self.inner, &x).py()? })
    }

    /// The real vector whose signs form the code.
    fn project(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.pre_quantization(&x).py()
    }
}

/// Exhaustive Hamming-space index with labels and friction values.
#[pyclass(module = "drcodes")]
struct HashIndex {
    inner: CoreIndex,
}

#[pymethods]
impl HashIndex {
    #[new]
    fn new(bits: usize, embedding_id: &str) -> Self {
        Self { inner: CoreIndex::new(bits, embedding_id) }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: CoreIndex::load(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn insert(&mut self, code: &BinaryCode, label: &str, mu: f64, surface_id: &str) -> PyResult<()> {
        self.inner.insert(code.inner.clone(), label, mu, surface_id).py()
    }

    /// `(surface_id, label, mu, distance)` of the `k` nearest entries.
    #[pyo3(signature = (query, k=10))]
    fn knn(&self, query: &BinaryCode, k: usize) -> PyResult<Vec<(String, String, f64, u32)>> {
        Ok(self
            .inner
            .knn(&query.inner, k)
            .py()?
            .into_iter()
            .map(|n| (n.entry.surface_id.clone(), n.entry.label.clone(), n.entry.mu, n.distance))
            .collect())
    }

    #[pyo3(signature = (query, k=10))]
    fn classify(&self, query: &BinaryCode, k: usize) -> PyResult<String> {
        self.inner.classify(&query.inner, k).py()
    }

    #[pyo3(signature = (query, k=10))]
    fn predict_friction(&self, query: &BinaryCode, k: usize) -> PyResult<f64> {
        self.inner.predict_friction(&query.inner, k).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Feed-forward friction regressor with two sigmoid hidden layers.
#[pyclass(module = "drcodes")]
struct RegressionNet {
    inner: CoreNet,
}

#[pymethods]
impl RegressionNet {
    #[staticmethod]
    #[pyo3(signature = (inputs, targets, epochs=2000, lr=1e-3, seed=0))]
    fn train(inputs: Vec<Vec<f64>>, targets: Vec<f64>, epochs: usize, lr: f64, seed: u64) -> PyResult<Self> {
        if inputs.len() != targets.len() {
            return Err(PyValueError::new_err("inputs and targets differ in length"));
        }
        let data: Vec<(Vec<f64>, f64)> = inputs.into_iter().zip(targets).collect();
        Ok(Self { inner: net_train(&data, epochs, lr, seed).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: CoreNet::load(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes().to_vec()
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<f64> {
        net_forward(&self.inner, &x).py()
    }
}

/// Hamming distance between two codes of the same embedding.
#[pyfunction]
fn hamming(a: &BinaryCode, b: &BinaryCode) -> PyResult<u32> {
    embed::hamming(&a.inner, &b.inner).py()
}

/// Codes from the signs of `v` (bit set for strictly positive entries).
#[pyfunction]
fn sign_quantize(v: Vec<f64>) -> BinaryCode {
    BinaryCode { inner: embed::sign_quantize(&v) }
}

/// Two-dimensional layout of real vectors; returns `(points, kl_trace)`.
#[pyfunction]
#[pyo3(signature = (vectors, perplexity=30.0, iters=1000, seed=0))]
fn tsne(vectors: Vec<Vec<f64>>, perplexity: f64, iters: usize, seed: u64) -> PyResult<(Vec<[f64; 2]>, Vec<f64>)> {
    let params = TsneParams { perplexity, iters, seed, ..TsneParams::default() };
    let r = tsne_embed(TsneInput::Vectors(&vectors), &params).py()?;
    Ok((r.points, r.kl_trace))
}

#[pyfunction]
fn recognition_precision(pairs: Vec<(String, String)>) -> PyResult<f64> {
    eval::recognition_precision(&pairs).py()
}

#[pyfunction]
fn mean_percentage_error(pairs: Vec<(f64, f64)>) -> PyResult<f64> {
    eval::mean_percentage_error(&pairs).py()
}

/// Renders a synthetic dataset into `out_dir`; returns the number of disks written.
#[pyfunction]
#[pyo3(signature = (out_dir, n_classes=12, instances_per_class=6, seed=0, diameter_px=128))]
fn synthesize_dataset(
    out_dir: PathBuf,
    n_classes: usize,
    instances_per_class: usize,
    seed: u64,
    diameter_px: usize,
) -> PyResult<usize> {
    let spec = DatasetSpec {
        diameter_px,
        ..DatasetSpec::new(n_classes, instances_per_class, RIG_ILLUMINATION_ANGLES.to_vec(), seed)
    };
    let manifest = disksynth::make_synthetic_dataset(&spec, &out_dir).py()?;
    Ok(manifest.surfaces.iter().map(|s| s.disks.len()).sum())
}

/// Runs the cross-validated pipeline on a dataset directory. `config` is a
/// JSON object (empty for defaults); the report comes back as JSON text.
#[pyfunction]
#[pyo3(signature = (dataset_dir, config="{}"))]
fn run_pipeline(py: Python<'_>, dataset_dir: PathBuf, config: &str) -> PyResult<String> {
    let cfg: PipelineConfig =
        serde_json::from_str(config).map_err(|e| PyValueError::new_err(format!("bad pipeline config: {e}")))?;
    let dataset = disksynth::Dataset::load_manifest(&dataset_dir).py()?;
    let out = py.detach(|| eval::run_pipeline(&dataset, &cfg)).py()?;
    Ok(out.report.to_json())
}

#[pymodule]
#[pyo3(name = "drcodes")]
pub fn drcodes_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GmmModel>()?;
    m.add_class::<BinaryCode>()?;
    m.add_class::<Embedding>()?;
    m.add_class::<HashIndex>()?;
    m.add_class::<RegressionNet>()?;
    m.add_function(wrap_pyfunction!(hamming, m)?)?;
    m.add_function(wrap_pyfunction!(sign_quantize, m)?)?;
    m.add_function(wrap_pyfunction!(tsne, m)?)?;
    m.add_function(wrap_pyfunction!(recognition_precision, m)?)?;
    m.add_function(wrap_pyfunction!(mean_percentage_error, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyDict;

    fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyModule>)>(f: F) {
        Python::initialize();
        Python::attach(|py| {
            let m = PyModule::new(py, "drcodes").unwrap();
            drcodes_module(&m).unwrap();
            f(py, &m);
        });
    }

    fn run(py: Python<'_>, m: &Bound<'_, PyModule>, code: &str) {
        let globals = PyDict::new(py);
        globals.set_item("drcodes", m).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        py.run(&code, Some(&globals), None).unwrap();
    }

    #[test]
    fn codes_and_index_round_trip_through_python() {
        with_module(|py, m| {
            run(
                py,
                m,
                r#"
e = drcodes.Embedding.lsh(8, 64, 3)
a = e.encode([1, 0, 0, 0, 0, 0, 0, 1])
b = e.encode([1, 0, 0, 0, 0, 0, 0, 0.9])
assert a.bit_count == 64 and len(a) == 64
assert a.embedding_id == e.embedding_id
assert drcodes.hamming(a, a) == 0
idx = drcodes.HashIndex(64, e.embedding_id)
idx.insert(a, "wood", 0.4, "s1")
idx.insert(e.encode([-1, 0, 0, 0, 0, 0, 0, -1]), "metal", 0.2, "s2")
assert len(idx) == 2
assert idx.classify(b, 1) == "wood"
assert idx.knn(b, 2)[0][0] == "s1"
assert abs(idx.predict_friction(b, 2) - 0.3) < 1e-12
"#,
            );
        });
    }

    #[test]
    fn errors_become_python_exceptions() {
        with_module(|py, m| {
            run(
                py,
                m,
                r#"
try:
    drcodes.Embedding.lsh(8, 63, 0)
    raise AssertionError("expected failure")
except ValueError:
    pass
try:
    drcodes.mean_percentage_error([(0.0, 0.1)])
    raise AssertionError("expected failure")
except ValueError:
    pass
e1 = drcodes.Embedding.lsh(4, 64, 1)
e2 = drcodes.Embedding.lsh(4, 64, 2)
try:
    drcodes.hamming(e1.encode([1, 2, 3, 4]), e2.encode([1, 2, 3, 4]))
    raise AssertionError("expected failure")
except ValueError:
    pass
"#,
            );
        });
    }

    #[test]
    fn mixture_and_fisher_vector() {
        with_module(|py, m| {
            run(
                py,
                m,
                r#"
import random
random.seed(1)
data = [[random.gauss(c, 0.3), random.gauss(-c, 0.3)] for c in (0, 3) for _ in range(100)]
g = drcodes.GmmModel.fit(data, 2, seed=4)
assert g.k == 2 and g.dim == 2
assert abs(sum(g.weights) - 1) < 1e-10
assert all(b >= a - 1e-9 for a, b in zip(g.loglik_trace, g.loglik_trace[1:]))
fv = g.fisher_vector(data[:10])
assert len(fv) == 8
assert abs(sum(x * x for x in fv) - 1) < 1e-9
"#,
            );
        });
    }
}
