//! Python bindings for the restoration toolkit: tensors and images, MMD
//! statistics, the toy prior networks, the degradation likelihood model,
//! and the restoration optimizers.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mrt_core::degradation as deg;
use mrt_core::exp;
use mrt_core::mmd as mmd_mod;
use mrt_core::prior;
use mrt_core::restore as restore_mod;
use mrt_core::rng::Rng;

fn py_err(e: mrt_core::Error) -> PyErr {
    match &e {
        mrt_core::Error::Io { .. } | mrt_core::Error::Format { .. } => {
            PyIOError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sample_set(rows: Vec<Vec<f32>>) -> PyResult<mmd_mod::SampleSet> {
    mmd_mod::SampleSet::from_rows(&rows).map_err(py_err)
}

fn rows_out(t: &mrt_core::Tensor) -> Vec<Vec<f32>> {
    let d = t.shape()[1];
    t.data().chunks(d).map(|r| r.to_vec()).collect()
}

/// Dense row-major f32 tensor.
#[pyclass(name = "Tensor", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: mrt_core::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: mrt_core::Tensor::from_vec(shape, data).map_err(py_err)?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        mrt_core::io::save_tensor(path, &self.inner).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyTensor {
            inner: mrt_core::io::load_tensor(path).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// [0,1]-valued image with 1 or 3 channels.
#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: mrt_core::Image,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(values: PyTensor) -> PyResult<Self> {
        Ok(PyImage {
            inner: mrt_core::Image::new(values.inner).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn open(path: &str) -> PyResult<Self> {
        Ok(PyImage {
            inner: mrt_core::io::load_image(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        mrt_core::io::save_image(path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn values(&self) -> PyTensor {
        PyTensor {
            inner: self.inner.values().clone(),
        }
    }

    fn levels(&self) -> Vec<u8> {
        self.inner.to_levels()
    }

    fn __repr__(&self) -> String {
        format!(
            "Image({}x{}x{})",
            self.inner.height(),
            self.inner.width(),
            self.inner.channels()
        )
    }
}

/// Squared MMD between two sample sets (rows are samples).
#[pyfunction]
#[pyo3(signature = (query, bank, gamma = 512.0, squared_exponent = false))]
fn mmd2(
    query: Vec<Vec<f32>>,
    bank: Vec<Vec<f32>>,
    gamma: f64,
    squared_exponent: bool,
) -> PyResult<f64> {
    let cfg = mmd_mod::MmdConfig {
        gamma,
        squared_exponent,
    };
    mmd_mod::mmd2(&sample_set(query)?, &sample_set(bank)?, &cfg).map_err(py_err)
}

/// Gradient of mmd2 with respect to each query row.
#[pyfunction]
#[pyo3(signature = (query, bank, gamma = 512.0, squared_exponent = false))]
fn mmd2_grad(
    query: Vec<Vec<f32>>,
    bank: Vec<Vec<f32>>,
    gamma: f64,
    squared_exponent: bool,
) -> PyResult<Vec<Vec<f32>>> {
    let cfg = mmd_mod::MmdConfig {
        gamma,
        squared_exponent,
    };
    let g = mmd_mod::mmd2_grad(&sample_set(query)?, &sample_set(bank)?, &cfg).map_err(py_err)?;
    Ok(rows_out(&g))
}

/// Gram matrix of the exponential kernel.
#[pyfunction]
#[pyo3(signature = (xs, ys, gamma = 512.0, squared_exponent = false))]
fn kernel_gram(
    xs: Vec<Vec<f32>>,
    ys: Vec<Vec<f32>>,
    gamma: f64,
    squared_exponent: bool,
) -> PyResult<Vec<Vec<f32>>> {
    let cfg = mmd_mod::MmdConfig {
        gamma,
        squared_exponent,
    };
    let g = mmd_mod::kernel_gram(&sample_set(xs)?, &sample_set(ys)?, &cfg).map_err(py_err)?;
    Ok(rows_out(&g))
}

/// Median pairwise distance bandwidth heuristic.
#[pyfunction]
fn bandwidth_from_bank(bank: Vec<Vec<f32>>) -> PyResult<f64> {
    mmd_mod::bandwidth_from_bank(&sample_set(bank)?).map_err(py_err)
}

/// The toy mapping network z -> w.
#[pyclass(name = "MappingNetwork")]
struct PyMapping {
    inner: prior::MappingNetwork,
}

#[pymethods]
impl PyMapping {
    #[staticmethod]
    #[pyo3(signature = (z_dim = 32, w_dim = 32, seed = 7))]
    fn toy(z_dim: usize, w_dim: usize, seed: u64) -> PyResult<Self> {
        Ok(PyMapping {
            inner: prior::MappingNetwork::toy(z_dim, w_dim, seed).map_err(py_err)?,
        })
    }

    fn map_latent(&self, z: Vec<f32>) -> PyResult<Vec<f32>> {
        let zt = mrt_core::Tensor::from_vec(vec![z.len()], z).map_err(py_err)?;
        Ok(self.inner.map_latent(&zt).map_err(py_err)?.data().to_vec())
    }

    #[pyo3(signature = (n_samples = 10000, seed = 0))]
    fn mean_latent(&self, n_samples: usize, seed: u64) -> PyResult<Vec<f32>> {
        let mut rng = Rng::from_seed(seed);
        Ok(prior::mean_latent(&self.inner, n_samples, &mut rng)
            .map_err(py_err)?
            .data()
            .to_vec())
    }
}

/// The frozen toy synthesis network.
#[pyclass(name = "SynthesisNetwork")]
struct PySynthesis {
    inner: prior::SynthesisNetwork,
}

#[pymethods]
impl PySynthesis {
    #[staticmethod]
    #[pyo3(signature = (style_dim = 32, channels = 8, out_channels = 1, seed = 7))]
    fn toy(style_dim: usize, channels: usize, out_channels: usize, seed: u64) -> PyResult<Self> {
        Ok(PySynthesis {
            inner: prior::SynthesisNetwork::toy(style_dim, channels, out_channels, seed)
                .map_err(py_err)?,
        })
    }

    #[getter]
    fn style_count(&self) -> usize {
        self.inner.style_count()
    }

    #[getter]
    fn style_dim(&self) -> usize {
        self.inner.style_dim()
    }

    fn synthesize(&self, styles: Vec<Vec<f32>>) -> PyResult<PyImage> {
        let set = sample_set(styles)?;
        Ok(PyImage {
            inner: prior::synthesize(&self.inner, &set).map_err(py_err)?,
        })
    }
}

/// A bank of mapped prior samples.
#[pyclass(name = "PriorBank")]
struct PyBank {
    inner: prior::PriorBank,
}

#[pymethods]
impl PyBank {
    #[staticmethod]
    #[pyo3(signature = (mapping, count = 1000, seed = 11))]
    fn sample(mapping: &PyMapping, count: usize, seed: u64) -> PyResult<Self> {
        let mut rng = Rng::from_seed(seed);
        Ok(PyBank {
            inner: prior::sample_prior_bank(&mapping.inner, count, &mut rng).map_err(py_err)?,
        })
    }

    #[getter]
    fn count(&self) -> usize {
        self.inner.count()
    }

    fn rows(&self) -> Vec<Vec<f32>> {
        rows_out(self.inner.samples().rows())
    }

    fn mean_row_norm(&self) -> f64 {
        self.inner.mean_row_norm()
    }
}

/// Conditional degradation density model.
#[pyclass(name = "DegradationModel")]
struct PyModel {
    inner: deg::DegradationModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (channels = 1, hidden = 32, blocks = 3, mixtures = 10, kernel = 3, kind = "gaussian", seed = 0))]
    fn new(
        channels: usize,
        hidden: usize,
        blocks: usize,
        mixtures: usize,
        kernel: usize,
        kind: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let arch = deg::DegradationArch {
            image_channels: channels,
            hidden,
            blocks,
            mixtures,
            kernel,
            kind: deg::MixtureKind::parse(kind).map_err(py_err)?,
        };
        Ok(PyModel {
            inner: deg::DegradationModel::new(arch, seed).map_err(py_err)?,
        })
    }

    /// Train on (condition, degraded) image pairs; returns rows of
    /// (epoch, train_nll, val_nll).
    #[pyo3(signature = (pairs, epochs = 5, batch_size = 16, learning_rate = 1e-3, seed = 0))]
    fn train(
        &mut self,
        pairs: Vec<(PyImage, PyImage)>,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let dataset: Vec<deg::DegradationPair> = pairs
            .into_iter()
            .map(|(c, d)| deg::DegradationPair {
                condition: c.inner,
                degraded: d.inner,
            })
            .collect();
        let cfg = deg::TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            seed,
            ..Default::default()
        };
        let mut rng = Rng::from_seed(seed);
        let outcome = deg::train(&mut self.inner, &dataset, &cfg, &mut rng).map_err(py_err)?;
        Ok(outcome
            .trace
            .iter()
            .map(|r| (r.epoch, r.train_nll, r.val_nll))
            .collect())
    }

    fn nll_bits_per_dim(&self, degraded: &PyImage, condition: &PyImage) -> PyResult<f64> {
        deg::nll_bits_per_dim(&self.inner, &degraded.inner, &condition.inner).map_err(py_err)
    }

    #[pyo3(signature = (condition, seed = 0))]
    fn sample(&self, condition: &PyImage, seed: u64) -> PyResult<PyImage> {
        let mut rng = Rng::from_seed(seed);
        Ok(PyImage {
            inner: deg::sample(&self.inner, &condition.inner, &mut rng).map_err(py_err)?,
        })
    }

    /// (max observed propagation radius, architectural bound).
    #[pyo3(signature = (seed = 0, checks = 20))]
    fn causality_audit(&self, seed: u64, checks: usize) -> PyResult<(usize, usize)> {
        let mut rng = Rng::from_seed(seed);
        let report = deg::causality_audit(&self.inner, &mut rng, checks).map_err(py_err)?;
        Ok((report.max_radius, report.radius_bound))
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        deg::checkpoint::save_model(dir, &self.inner, 0, "python").map_err(py_err)
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: deg::checkpoint::load_model(dir).map_err(py_err)?,
        })
    }
}

/// Blockquant toy dataset from synthesized prior images; returns
/// (condition, degraded) pairs.
#[pyfunction]
#[pyo3(signature = (mapping, synthesis, n, block = 4, quality = 50, seed = 0))]
fn make_blockquant_dataset(
    mapping: &PyMapping,
    synthesis: &PySynthesis,
    n: usize,
    block: usize,
    quality: u32,
    seed: u64,
) -> PyResult<Vec<(PyImage, PyImage)>> {
    let kind = exp::DegradationKind::BlockQuant { block, quality };
    let mut rng = Rng::from_seed(seed);
    let pairs = exp::make_toy_dataset(
        &kind,
        n,
        &exp::ImageSource::Prior {
            mapping: &mapping.inner,
            synthesis: &synthesis.inner,
        },
        &mut rng,
    )
    .map_err(py_err)?;
    Ok(pairs
        .into_iter()
        .map(|p| {
            (
                PyImage { inner: p.condition },
                PyImage { inner: p.degraded },
            )
        })
        .collect())
}

fn restore_config(
    steps: usize,
    learning_rate: f64,
    coeff: f64,
    lambda_mmd: f64,
    lambda_cross: f64,
    use_mmd: bool,
    use_mean_init: bool,
    use_spherical: bool,
    sr_factor: usize,
    seed: u64,
) -> restore_mod::RestoreConfig {
    restore_mod::RestoreConfig {
        steps,
        learning_rate,
        coeff,
        lambda_mmd,
        lambda_cross,
        use_mmd,
        use_mean_init,
        use_spherical,
        sr_factor,
        seed,
        ..Default::default()
    }
}

/// Restore against a trained degradation model. Returns the restored image
/// and the (total, fidelity, mmd, cross) trace.
#[pyfunction]
#[pyo3(signature = (observed, mapping, synthesis, model, bank, steps = 100, learning_rate = 0.05,
                    coeff = 10.0, lambda_mmd = 1.0, lambda_cross = 0.01, use_mmd = true,
                    use_mean_init = true, use_spherical = true, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn restore(
    observed: &PyImage,
    mapping: &PyMapping,
    synthesis: &PySynthesis,
    model: &PyModel,
    bank: &PyBank,
    steps: usize,
    learning_rate: f64,
    coeff: f64,
    lambda_mmd: f64,
    lambda_cross: f64,
    use_mmd: bool,
    use_mean_init: bool,
    use_spherical: bool,
    seed: u64,
) -> PyResult<(PyImage, Vec<(f64, f64, f64, f64)>)> {
    let cfg = restore_config(
        steps,
        learning_rate,
        coeff,
        lambda_mmd,
        lambda_cross,
        use_mmd,
        use_mean_init,
        use_spherical,
        4,
        seed,
    );
    let result = restore_mod::restore(
        &observed.inner,
        &mapping.inner,
        &synthesis.inner,
        &model.inner,
        &bank.inner,
        &cfg,
    )
    .map_err(py_err)?;
    let trace = result
        .trace
        .iter()
        .map(|r| (r.total, r.fidelity, r.mmd, r.cross))
        .collect();
    Ok((
        PyImage {
            inner: result.final_image,
        },
        trace,
    ))
}

/// Super-resolution restoration against a low-resolution observation.
#[pyfunction]
#[pyo3(signature = (observed_lr, mapping, synthesis, bank, factor = 4, steps = 100,
                    learning_rate = 0.05, coeff = 10.0, lambda_mmd = 1.0, lambda_cross = 0.01,
                    use_mmd = true, use_mean_init = true, use_spherical = true, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn restore_sr(
    observed_lr: &PyImage,
    mapping: &PyMapping,
    synthesis: &PySynthesis,
    bank: &PyBank,
    factor: usize,
    steps: usize,
    learning_rate: f64,
    coeff: f64,
    lambda_mmd: f64,
    lambda_cross: f64,
    use_mmd: bool,
    use_mean_init: bool,
    use_spherical: bool,
    seed: u64,
) -> PyResult<(PyImage, Vec<(f64, f64, f64, f64)>)> {
    let cfg = restore_config(
        steps,
        learning_rate,
        coeff,
        lambda_mmd,
        lambda_cross,
        use_mmd,
        use_mean_init,
        use_spherical,
        factor,
        seed,
    );
    let result = restore_mod::restore_sr(
        &observed_lr.inner,
        &mapping.inner,
        &synthesis.inner,
        &bank.inner,
        &cfg,
    )
    .map_err(py_err)?;
    let trace = result
        .trace
        .iter()
        .map(|r| (r.total, r.fidelity, r.mmd, r.cross))
        .collect();
    Ok((
        PyImage {
            inner: result.final_image,
        },
        trace,
    ))
}

/// Box-filter downscale.
#[pyfunction]
fn downscale(img: &PyImage, factor: usize) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: restore_mod::downscale(&img.inner, factor).map_err(py_err)?,
    })
}

#[pymodule]
fn mrt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyMapping>()?;
    m.add_class::<PySynthesis>()?;
    m.add_class::<PyBank>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(mmd2, m)?)?;
    m.add_function(wrap_pyfunction!(mmd2_grad, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_gram, m)?)?;
    m.add_function(wrap_pyfunction!(bandwidth_from_bank, m)?)?;
    m.add_function(wrap_pyfunction!(make_blockquant_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(restore, m)?)?;
    m.add_function(wrap_pyfunction!(restore_sr, m)?)?;
    m.add_function(wrap_pyfunction!(downscale, m)?)?;
    Ok(())
}
