//! Python bindings: tensors, factorized layers, spectra, statistics,
//! complexity counts and the training harness.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sfconv::harness::train;
use sfconv::harness::{synth_dataset, Checkpoint, TaskKind, TrainConfig, Trainer};
use sfconv::nn::ConvConfig;
use sfconv::regularizer::{kl_to_uniform, layer_kl, matrix_kl, normalize_spectrum};
use sfconv::sfconv::{init_factorized_with, sfconv_forward, spectrum_view};
use sfconv::{complexity, imstats, linalg};

fn py_err(e: sfconv::Error) -> PyErr {
    match e {
        sfconv::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for sfconv::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn task_kind(kind: &str) -> PyResult<TaskKind> {
    match kind {
        "classify" | "classification" => Ok(TaskKind::Classification),
        "segment" | "segmentation" => Ok(TaskKind::Segmentation),
        _ => Err(PyValueError::new_err(format!(
            "expected 'classify' or 'segment', got {kind:?}"
        ))),
    }
}

/// Dense row-major float64 tensor.
#[pyclass(name = "Tensor", module = "sfconv_py", from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    pub inner: sfconv::Tensor,
}

impl From<sfconv::Tensor> for PyTensor {
    fn from(inner: sfconv::Tensor) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(sfconv::Tensor::new(shape, data).py()?.into())
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> PyResult<Self> {
        Ok(sfconv::Tensor::zeros(shape).py()?.into())
    }

    #[staticmethod]
    fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(sfconv::Tensor::from_rows(&rows).py()?.into())
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(sfconv::Tensor::load_tnsr(path).py()?.into())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_tnsr(path).py()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(self.inner.reshape(shape).py()?.into())
    }

    fn matmul(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(self.inner.matmul(&other.inner).py()?.into())
    }

    fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    fn __len__(&self) -> usize {
        self.inner.shape()[0]
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }

    fn __eq__(&self, other: &PyTensor) -> bool {
        self.inner == other.inner
    }
}

/// A k×k convolution factorized into a 1×k stage (Q) and a k×1 stage (P).
#[pyclass(name = "FactorizedFilter", module = "sfconv_py", from_py_object)]
#[derive(Clone)]
pub struct PyFactorizedFilter {
    pub inner: sfconv::FactorizedFilter,
}

#[pymethods]
impl PyFactorizedFilter {
    /// Seeded initialization; padding defaults to `kernel // 2`.
    #[new]
    #[pyo3(signature = (in_channels, out_channels, kernel, rank, seed=0, stride=1, padding=None))]
    fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rank: usize,
        seed: u64,
        stride: usize,
        padding: Option<usize>,
    ) -> PyResult<Self> {
        use rand::SeedableRng;
        let cfg = ConvConfig::square(
            kernel,
            stride,
            padding.unwrap_or(kernel / 2),
            in_channels,
            out_channels,
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: init_factorized_with(&mut rng, cfg, rank).py()?,
        })
    }

    /// Build from explicit filter banks: q `r×c_in×1×k`, p `c_out×r×k×1`.
    #[staticmethod]
    #[pyo3(signature = (q, p, bias=None, stride=1, padding=None))]
    fn from_filters(
        q: PyTensor,
        p: PyTensor,
        bias: Option<PyTensor>,
        stride: usize,
        padding: Option<usize>,
    ) -> PyResult<Self> {
        let (qs, ps) = (q.inner.shape(), p.inner.shape());
        if qs.len() != 4 || ps.len() != 4 {
            return Err(PyValueError::new_err("filter banks must be rank-4"));
        }
        let k = qs[3];
        let cfg = ConvConfig::square(k, stride, padding.unwrap_or(k / 2), qs[1], ps[0]);
        let inner =
            sfconv::FactorizedFilter::new(q.inner, p.inner, bias.map(|b| b.inner), cfg).py()?;
        Ok(Self { inner })
    }

    fn forward(&self, x: &PyTensor) -> PyResult<PyTensor> {
        Ok(sfconv_forward(&x.inner, &self.inner).py()?.into())
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn q_filters(&self) -> PyTensor {
        self.inner.q_filters.clone().into()
    }

    #[getter]
    fn p_filters(&self) -> PyTensor {
        self.inner.p_filters.clone().into()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// The equivalent full `c_out×c_in×k×k` kernel.
    fn emulated_weight(&self) -> PyTensor {
        self.inner.emulated_weight().into()
    }

    /// `(sigma_P, sigma_Q)`: singular values of both factor matrices.
    fn spectra(&self) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let view = spectrum_view(&self.inner);
        let p = linalg::svd(&view.matrix_p).py()?.sigma;
        let q = linalg::svd(&view.matrix_q).py()?.sigma;
        Ok((p, q))
    }

    /// `(kl_P, kl_Q)` to the uniform spectrum.
    fn kl(&self) -> PyResult<(f64, f64)> {
        layer_kl(&self.inner).py()
    }

    fn flops(&self, height: usize, width: usize) -> PyResult<u64> {
        let f = &self.inner;
        complexity::sfconv_flops(f.config(), f.rank(), height, width, f.bias.is_some()).py()
    }

    /// FLOPs of the unfactorized convolution with the same geometry.
    fn full_flops(&self, height: usize, width: usize) -> PyResult<u64> {
        let f = &self.inner;
        complexity::conv_flops(f.config(), height, width, f.bias.is_some()).py()
    }

    fn rank_threshold(&self, height: usize, width: usize) -> PyResult<f64> {
        complexity::sfconv_rank_threshold(self.inner.config(), height, width).py()
    }

    fn __repr__(&self) -> String {
        let f = &self.inner;
        format!(
            "FactorizedFilter(in={}, out={}, kernel={}, rank={})",
            f.in_channels(),
            f.out_channels(),
            f.kernel(),
            f.rank()
        )
    }
}

/// Thin SVD: `(u, sigma, v)` with `a = u · diag(sigma) · vᵀ`.
#[pyfunction]
fn svd(a: &PyTensor) -> PyResult<(PyTensor, Vec<f64>, PyTensor)> {
    let r = linalg::svd(&a.inner).py()?;
    Ok((r.u.into(), r.sigma, r.v.into()))
}

/// KL divergence of a matrix's normalized spectrum from uniform.
#[pyfunction]
fn spectrum_kl(a: &PyTensor) -> PyResult<f64> {
    matrix_kl(&a.inner).py()
}

/// KL divergence of the normalized singular values `sigma` from uniform.
#[pyfunction]
fn kl_uniform(sigma: Vec<f64>) -> PyResult<f64> {
    Ok(kl_to_uniform(&normalize_spectrum(&sigma).py()?))
}

#[pyfunction]
fn skewness(samples: Vec<f64>) -> PyResult<f64> {
    imstats::skewness(&samples).py()
}

#[pyfunction]
fn kurtosis(samples: Vec<f64>) -> PyResult<f64> {
    imstats::kurtosis(&samples).py()
}

/// `(bin_edges, counts)`.
#[pyfunction]
fn histogram(samples: Vec<f64>, bins: usize) -> PyResult<(Vec<f64>, Vec<u64>)> {
    let h = imstats::histogram(&samples, bins).py()?;
    Ok((h.bin_edges, h.counts))
}

#[pyfunction]
fn load_image(path: PathBuf) -> PyResult<PyTensor> {
    Ok(imstats::load_image(path).py()?.into())
}

/// Parameters and FLOPs of the model described by a config text for a
/// `[batch, channels, height, width]` input.
#[pyfunction]
fn model_complexity(config: &str, input_shape: Vec<usize>) -> PyResult<(u64, u64)> {
    let net = TrainConfig::parse(config).py()?.build_network().py()?;
    let flops = complexity::count_flops(&net, &input_shape).py()?;
    Ok((complexity::count_params(&net), flops))
}

/// Default config text for `"classify"` or `"segment"`.
#[pyfunction]
#[pyo3(signature = (kind, seed=0))]
fn default_config(kind: &str, seed: u64) -> PyResult<String> {
    Ok(TrainConfig::for_task(task_kind(kind)?, seed).to_text())
}

/// Write a synthetic sample directory.
#[pyfunction]
#[pyo3(signature = (kind, n, out, seed=0))]
fn synth(kind: &str, n: usize, out: PathBuf, seed: u64) -> PyResult<()> {
    synth_dataset(task_kind(kind)?, n, seed)
        .py()?
        .save(out)
        .py()
}

/// Train from config text. Writes metrics and checkpoint into `out` when
/// given and returns one dict per epoch.
#[pyfunction]
#[pyo3(signature = (config, out=None))]
fn train_config<'py>(
    py: Python<'py>,
    config: &str,
    out: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = TrainConfig::parse(config).py()?;
    let outcome = py.detach(|| train::train(cfg, out.as_deref())).py()?;
    outcome
        .metrics
        .iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("epoch", row.epoch)?;
            d.set_item("step", row.step)?;
            d.set_item("task_loss", row.task_loss)?;
            d.set_item("kl_term", row.kl_term)?;
            d.set_item("total", row.total)?;
            d.set_item("lr", row.lr)?;
            d.set_item("lambda", row.lambda)?;
            d.set_item("train_metric", row.train_metric)?;
            d.set_item("eval_metric", row.eval_metric)?;
            Ok(d)
        })
        .collect()
}

/// Score a checkpoint on its own eval split or on a sample directory.
#[pyfunction]
#[pyo3(signature = (checkpoint, data=None))]
fn evaluate(checkpoint: PathBuf, data: Option<PathBuf>) -> PyResult<f64> {
    let trainer = Trainer::from_checkpoint(&Checkpoint::load(checkpoint).py()?).py()?;
    let data = match data {
        Some(d) => sfconv::harness::Dataset::load(d).py()?,
        None => trainer.eval_data().clone(),
    };
    train::evaluate(trainer.network(), &data, trainer.config().batch_size()).py()
}

#[pymodule]
pub fn sfconv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyFactorizedFilter>()?;
    m.add_function(wrap_pyfunction!(svd, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum_kl, m)?)?;
    m.add_function(wrap_pyfunction!(kl_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(skewness, m)?)?;
    m.add_function(wrap_pyfunction!(kurtosis, m)?)?;
    m.add_function(wrap_pyfunction!(histogram, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(model_complexity, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train_config, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
