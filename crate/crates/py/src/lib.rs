//! Python module `ubp`: blur, radius rule, contrastive loss, retrieval
//! metrics and a one-call synthetic train/evaluate run.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use ubp_core::blur::{fovea_blur as core_fovea_blur, radius_to_kernel, BlurKernel, BlurParams, Image};
use ubp_core::data::epochs::average_repetitions;
use ubp_core::data::synthetic::{calibrate_noise, generate_synthetic, SyntheticSpec};
use ubp_core::data::toy::{build_feature_cache, ToyVisionEncoder};
use ubp_core::eval::{evaluate, map_score, rank_gallery, topk_accuracy, GalleryBlur};
use ubp_core::train::{fit, TrainConfig};
use ubp_core::{Matrix, Rng, UbpError};

fn py_err(e: UbpError) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix<f64>> {
    Matrix::from_rows(&rows).map_err(py_err)
}

/// Foveated blur of a planar (channel-major) image given as a flat list.
#[pyfunction]
#[pyo3(signature = (data, height, width, channels, radius, lam = 2.0))]
fn fovea_blur(data: Vec<f64>, height: usize, width: usize, channels: usize, radius: f64, lam: f64) -> PyResult<Vec<f64>> {
    let img = Image::new(height, width, channels, data).map_err(py_err)?;
    let out = core_fovea_blur(&img, &BlurParams::centered(radius, lam)).map_err(py_err)?;
    Ok(out.into_vec())
}

/// 1-D kernel weights for a radius; `[1.0]` when the radius means no blur.
#[pyfunction]
fn kernel_weights(radius: f64) -> Vec<f64> {
    match radius_to_kernel(radius) {
        BlurKernel::Identity => vec![1.0],
        BlurKernel::Gaussian(k) => k.weights().to_vec(),
    }
}

/// Blur radius for a similarity score given the interval `[lo, hi]`.
#[pyfunction]
#[pyo3(signature = (score, lo, hi, r0 = 0.25, c = 10.0, flip = false))]
fn assign_radius(score: f64, lo: f64, hi: f64, r0: f64, c: f64, flip: bool) -> f64 {
    ubp_core::uncertainty::assign_radius(score, lo, hi, r0, c, flip)
}

/// Symmetric InfoNCE loss of a square logit matrix with matched pairs on
/// the diagonal.
#[pyfunction]
fn sce_loss(logits: Vec<Vec<f64>>) -> PyResult<f64> {
    ubp_core::loss::sce_loss(&matrix(logits)?).map_err(py_err)
}

/// EMA model of paired similarity scores.
#[pyclass]
struct SimilarityTracker {
    inner: ubp_core::uncertainty::SimilarityTracker,
}

#[pymethods]
impl SimilarityTracker {
    #[new]
    #[pyo3(signature = (momentum = 0.9, z = 1.96, warmup = 1))]
    fn new(momentum: f64, z: f64, warmup: u64) -> PyResult<Self> {
        let inner = ubp_core::uncertainty::SimilarityTracker::new(momentum, z, warmup).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn update(&mut self, scores: Vec<f64>) -> PyResult<()> {
        self.inner.update(&scores).map_err(py_err)
    }

    #[getter]
    fn ready(&self) -> bool {
        self.inner.is_ready()
    }

    fn interval(&self) -> PyResult<(f64, f64)> {
        self.inner.confidence_interval().map_err(py_err)
    }
}

/// Top-1, top-5 and mAP (percent) of ranking `gallery` rows for each query
/// by dot product.
#[pyfunction]
fn retrieval<'py>(
    py: Python<'py>,
    queries: Vec<Vec<f64>>,
    gallery: Vec<Vec<f64>>,
    targets: Vec<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let res = rank_gallery(&matrix(queries)?, &matrix(gallery)?, &targets).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("top1", topk_accuracy(&res, 1))?;
    out.set_item("top5", topk_accuracy(&res, 5))?;
    out.set_item("map", map_score(&res))?;
    out.set_item("ranks", res.true_ranks)?;
    Ok(out)
}

/// Generates a small synthetic dataset, trains on it and returns the
/// zero-shot report as a dict.
#[pyfunction]
#[pyo3(signature = (seed = 0, blur_prior = true, epochs = 20, n_concepts = 40, n_test = 10))]
fn synthetic_run<'py>(
    py: Python<'py>,
    seed: u64,
    blur_prior: bool,
    epochs: usize,
    n_concepts: usize,
    n_test: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let report = py
        .detach(|| {
            let rng = Rng::new(seed);
            let mut spec = SyntheticSpec {
                n_concepts,
                n_test_concepts: n_test,
                trials_per_image: 8,
                ..SyntheticSpec::default()
            };
            spec.noise_sigma = calibrate_noise(&spec, 70.0, &rng)?;
            let data = generate_synthetic(&spec, &rng)?;
            let cfg = TrainConfig {
                epochs,
                batch_size: 64,
                lr: Some(1e-3),
                seed,
                blur_prior,
                ..TrainConfig::default()
            };
            let encoder = ToyVisionEncoder::new(64, 1)?;
            let cache = build_feature_cache(&data.images, &encoder, &cfg.rule(), cfg.blur_lambda)?;
            let result = fit(&cfg, &average_repetitions(&data.train), &cache, None, |_| Ok(()))?;
            let test = average_repetitions(&data.test);
            evaluate(&result.best.params, &cfg, &test, &cache, GalleryBlur::Base).map(|e| e.report)
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("gallery_size", report.gallery_size)?;
    out.set_item("top1", report.top1)?;
    out.set_item("top5", report.top5)?;
    out.set_item("map", report.map)?;
    out.set_item("mean_similarity", report.mean_similarity)?;
    out.set_item("config_hash", report.config_hash)?;
    Ok(out)
}

#[pymodule]
fn ubp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fovea_blur, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_weights, m)?)?;
    m.add_function(wrap_pyfunction!(assign_radius, m)?)?;
    m.add_function(wrap_pyfunction!(sce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(retrieval, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_run, m)?)?;
    m.add_class::<SimilarityTracker>()?;
    Ok(())
}
