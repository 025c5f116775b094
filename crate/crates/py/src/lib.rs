//! Python bindings. Images cross the boundary as flat `float` lists plus a
//! shape; values are on `[-1, 1]`.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use r2c::checkpoint::Checkpoint;
use r2c::data::{load_manifest, synthesize_toy_corpus, write_toy_corpus, ArtifactMix, ToyConfig};
use r2c::metrics::{confusion, mean_l1, psnr, restore_iterative, Ratio};
use r2c::operational::{operational_conv2d, ConvSpec};
use r2c::training::{train as run_training, TrainConfig, Trainer};
use r2c::{Activation, Graph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Dense `f32` array.
#[pyclass(name = "Tensor", module = "r2c_py", from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: r2c::Tensor<f32>,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self { inner: r2c::Tensor::from_vec(&shape, data).map_err(py_err)? })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.numel()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Image-to-image generator with a class head, loaded from a checkpoint.
#[pyclass(name = "Generator", module = "r2c_py")]
pub struct PyGenerator {
    inner: r2c::models::Generator<f32>,
}

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(py_err)?;
        Ok(Self { inner: Trainer::<f32>::from_checkpoint(&ckpt).map_err(py_err)?.model.g })
    }

    #[getter]
    fn q(&self) -> usize {
        self.inner.config().effective_q()
    }

    #[getter]
    fn image_size(&self) -> (usize, usize) {
        self.inner.config().image_size
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// Applies the image head `k` times.
    #[pyo3(signature = (image, k = 3))]
    fn restore(&self, image: &PyTensor, k: usize) -> PyResult<PyTensor> {
        Ok(PyTensor { inner: restore_iterative(&self.inner, &image.inner, k).map_err(py_err)? })
    }

    /// Class probabilities for one image.
    fn classify(&self, image: &PyTensor) -> PyResult<Vec<f32>> {
        let (h, w) = self.inner.config().image_size;
        let x = image.inner.clone().reshape(&[1, 1, h, w]).map_err(py_err)?;
        Ok(self.inner.infer(&x).map_err(py_err)?.class_probs.data().to_vec())
    }
}

fn activation(name: &str) -> PyResult<Activation> {
    Ok(match name {
        "linear" => Activation::Linear,
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        "sigmoid" => Activation::Sigmoid,
        "leaky_relu" => Activation::LeakyRelu(0.2),
        other => return Err(PyValueError::new_err(format!("unknown activation {other:?}"))),
    })
}

/// Forward pass of one operational layer: weights `[Q, c_out, c_in, k, k]`
/// (`[Q, c_in, c_out, k, k]` when transposed) and biases `[Q, c_out]`.
#[pyfunction]
#[pyo3(signature = (x, weights, biases, stride = 1, transposed = false, activation = "tanh"))]
fn operational_layer(
    x: &PyTensor,
    weights: &PyTensor,
    biases: &PyTensor,
    stride: usize,
    transposed: bool,
    activation: &str,
) -> PyResult<PyTensor> {
    let k = *weights.inner.shape().last().ok_or_else(|| py_err("weights must be 5-d"))?;
    let spec = if transposed { ConvSpec::upsample(stride, k) } else { ConvSpec::same(stride, k) };
    let act = self::activation(activation)?;
    let mut g = Graph::<f32>::new();
    let xv = g.constant(x.inner.clone());
    let wv = g.constant(weights.inner.clone());
    let bv = g.constant(biases.inner.clone());
    let y = operational_conv2d(&mut g, xv, wv, bv, spec, act).map_err(py_err)?;
    Ok(PyTensor { inner: g.value(y).clone() })
}

#[pyfunction]
fn load_png(path: PathBuf) -> PyResult<PyTensor> {
    Ok(PyTensor { inner: r2c::data::load_png(&path).map_err(py_err)? })
}

#[pyfunction]
fn save_png(path: PathBuf, image: &PyTensor) -> PyResult<()> {
    r2c::data::save_png(&path, &image.inner).map_err(py_err)
}

#[pyfunction(name = "psnr")]
fn py_psnr(a: &PyTensor, b: &PyTensor) -> PyResult<f64> {
    psnr(&a.inner, &b.inner).map_err(py_err)
}

#[pyfunction(name = "mean_l1")]
fn py_mean_l1(a: &PyTensor, b: &PyTensor) -> PyResult<f64> {
    mean_l1(&a.inner, &b.inner).map_err(py_err)
}

/// Confusion counts and scores; undefined ratios come back as `None`.
#[pyfunction]
#[pyo3(signature = (predictions, labels, positive_class = 1))]
fn scores(predictions: Vec<usize>, labels: Vec<usize>, positive_class: usize) -> PyResult<HashMap<String, Option<f64>>> {
    let c = confusion(&predictions, &labels, positive_class).map_err(py_err)?;
    let pairs: [(&str, Ratio); 6] = [
        ("accuracy", c.accuracy()),
        ("sensitivity", c.sensitivity()),
        ("specificity", c.specificity()),
        ("precision", c.precision()),
        ("f1", c.f_beta(1.0)),
        ("f2", c.f_beta(2.0)),
    ];
    let mut out: HashMap<String, Option<f64>> = pairs.iter().map(|(k, r)| (k.to_string(), r.value())).collect();
    for (k, v) in [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn_)] {
        out.insert(k.into(), Some(v as f64));
    }
    Ok(out)
}

/// Writes the synthetic two-class corpus to `out`.
#[pyfunction]
#[pyo3(signature = (out, seed, severity = 1.0, n_poor = 400, n_high = 400, n_test = 100, size = 64))]
fn make_toy(out: PathBuf, seed: u64, severity: f64, n_poor: usize, n_high: usize, n_test: usize, size: usize) -> PyResult<()> {
    let config = ToyConfig { n_poor, n_high, n_test, size, artifacts: ArtifactMix::default().scaled(severity) };
    let corpus = synthesize_toy_corpus(&config, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)?;
    write_toy_corpus(&corpus, &out).map_err(py_err)
}

/// Trains from a manifest and returns the per-epoch losses.
#[pyfunction]
#[pyo3(signature = (manifest, ckpt_dir, seed, epochs, q = 3, gamma = 0.1, lam = 10.0, beta = 5.0, gen_base = 64, disc_base = 32, lr = 2e-4))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    manifest: PathBuf,
    ckpt_dir: PathBuf,
    seed: u64,
    epochs: usize,
    q: usize,
    gamma: f64,
    lam: f64,
    beta: f64,
    gen_base: usize,
    disc_base: usize,
    lr: f64,
) -> PyResult<Vec<HashMap<String, f64>>> {
    let dataset = load_manifest(&manifest, 2).map_err(py_err)?;
    let size = dataset.image_size().map_err(py_err)?;
    let mut c = TrainConfig::default();
    c.generator.q = q;
    c.generator.base_channels = gen_base;
    c.generator.image_size = size;
    c.discriminator.q = q;
    c.discriminator.base_channels = disc_base;
    c.discriminator.image_size = size;
    c.weights.gamma = gamma;
    c.weights.lambda = lam;
    c.weights.beta = beta;
    c.optimizer.alpha = lr;
    c.schedule.alpha0 = lr;
    c.schedule.total_epochs = epochs;
    c.schedule.hold_epochs = c.schedule.hold_epochs.min(epochs);
    c.epochs = epochs;
    c.seed = seed;
    c.validate().map_err(py_err)?;
    let outcome = py
        .detach(|| {
            let mut trainer = Trainer::<f32>::new(c)?;
            run_training(&mut trainer, &dataset, Some(&ckpt_dir))
        })
        .map_err(py_err)?;
    Ok(outcome
        .reports
        .iter()
        .map(|r| {
            let l = &r.losses;
            HashMap::from([
                ("epoch".into(), r.epoch as f64),
                ("L_G".into(), l.l_g),
                ("L_adv".into(), l.l_adv),
                ("L_cyc".into(), l.l_cyc),
                ("L_id".into(), l.l_id),
                ("L_class".into(), l.l_class),
                ("L_D".into(), l.l_d),
                ("lr".into(), r.lr),
            ])
        })
        .collect())
}

#[pymodule]
pub fn r2c_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(operational_layer, m)?)?;
    m.add_function(wrap_pyfunction!(load_png, m)?)?;
    m.add_function(wrap_pyfunction!(save_png, m)?)?;
    m.add_function(wrap_pyfunction!(py_psnr, m)?)?;
    m.add_function(wrap_pyfunction!(py_mean_l1, m)?)?;
    m.add_function(wrap_pyfunction!(scores, m)?)?;
    m.add_function(wrap_pyfunction!(make_toy, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
