//! Python bindings: FRC labeling, model inference with patch maps, structure
//! synthesis and rank correlation. Images cross the boundary as flat
//! row-major `float` lists plus an explicit `(height, width)`.

use std::path::PathBuf;

use microiqa::eval;
use microiqa::frc;
use microiqa::net::{self, ModelSpec};
use microiqa::predict;
use microiqa::synth::{self, StructureKind, StructureSpec};
use microiqa::Image;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: microiqa::Error) -> PyErr {
    match e {
        microiqa::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        microiqa::Error::NumericFailure(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Builds an image from a flat row-major buffer, checking the shape.
pub fn image_from_flat(pixels: Vec<f32>, height: usize, width: usize) -> microiqa::Result<Image> {
    Image::new(height, width, pixels)
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Debug, Clone)]
pub struct Resolution {
    pub cutoff_frequency: f64,
    pub resolution_px: f64,
    pub resolution_um: Option<f64>,
    pub no_crossing: bool,
}

#[pymethods]
impl Resolution {
    fn __repr__(&self) -> String {
        format!(
            "Resolution(cutoff_frequency={:.4}, resolution_px={:.3}, no_crossing={})",
            self.cutoff_frequency, self.resolution_px, self.no_crossing
        )
    }
}

/// Single-image FRC resolution of a `height x width` image.
#[pyfunction]
fn frc_resolution(pixels: Vec<f32>, height: usize, width: usize) -> PyResult<Resolution> {
    let image = image_from_flat(pixels, height, width).map_err(py_err)?;
    let r = frc::frc_resolution(&image).map_err(py_err)?;
    Ok(Resolution {
        cutoff_frequency: r.cutoff_frequency,
        resolution_px: r.resolution_px,
        resolution_um: r.resolution_um,
        no_crossing: r.no_crossing,
    })
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Debug, Clone)]
pub struct Prediction {
    pub score: f64,
    pub normalized_score: f64,
    /// Per-patch quality, row-major over a `rows x cols` grid.
    pub quality_map: Vec<f64>,
    pub weight_map: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub warning: Option<String>,
}

#[pyclass(frozen)]
pub struct Model {
    inner: net::Model,
}

#[pymethods]
impl Model {
    /// Loads weights written by `microiqa train`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model { inner: net::load_model(&path).map_err(py_err)? })
    }

    /// Freshly initialized model; `width_divisor` shrinks every layer.
    #[staticmethod]
    #[pyo3(signature = (seed, width_divisor = 1))]
    fn init(seed: u64, width_divisor: usize) -> PyResult<Self> {
        let spec = match width_divisor {
            0 => return Err(PyValueError::new_err("width_divisor must be at least 1")),
            1 => ModelSpec::default(),
            d => ModelSpec::scaled(d),
        };
        Ok(Model { inner: net::init_model(spec, seed).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        net::save_model(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn target_name(&self) -> String {
        self.inner.target_name.clone()
    }

    #[getter]
    fn higher_is_better(&self) -> bool {
        self.inner.higher_is_better
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    /// Global score plus quality and weight maps of a `height x width` image.
    fn predict(&self, py: Python<'_>, pixels: Vec<f32>, height: usize, width: usize) -> PyResult<Prediction> {
        let image = image_from_flat(pixels, height, width).map_err(py_err)?;
        let r = py.detach(|| predict::predict_image(&self.inner, &image)).map_err(py_err)?;
        Ok(Prediction {
            score: r.score,
            normalized_score: r.normalized_score,
            rows: r.patch_quality.rows,
            cols: r.patch_quality.cols,
            quality_map: r.patch_quality.values,
            weight_map: r.patch_weight.values,
            warning: r.warning,
        })
    }
}

/// Trainable parameters of the full-size network.
#[pyfunction]
fn full_parameter_count() -> usize {
    ModelSpec::default().parameter_count()
}

/// Renders one clean synthetic field of view; returns a flat row-major list.
#[pyfunction]
fn generate_structure(kind: &str, height: usize, width: usize, seed: u64) -> PyResult<Vec<f32>> {
    let kind: StructureKind = kind.parse().map_err(py_err)?;
    let image = synth::gen_structure(&StructureSpec::preset(kind, (height, width), seed)).map_err(py_err)?;
    Ok(image.into_pixels())
}

/// Tie-corrected Kendall rank correlation.
#[pyfunction]
fn kendall_tau(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    eval::kendall_tau(&x, &y).map_err(py_err)
}

/// Rank correlation between per-level mean scores and quality order.
#[pyfunction]
fn grouped_krcc(scores: Vec<f64>, levels: Vec<u32>, higher_is_better: bool) -> PyResult<f64> {
    eval::grouped_krcc(&scores, &levels, higher_is_better).map_err(py_err)
}

/// Weight-averaged patch scores.
#[pyfunction]
fn weighted_mean(values: Vec<f64>, weights: Vec<f64>) -> PyResult<f64> {
    if values.len() != weights.len() || values.is_empty() {
        return Err(PyValueError::new_err("values and weights must be non-empty and equally long"));
    }
    Ok(net::weighted_mean(&values, &weights))
}

#[pymodule]
fn pymicroiqa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Prediction>()?;
    m.add_class::<Resolution>()?;
    m.add_function(wrap_pyfunction!(frc_resolution, m)?)?;
    m.add_function(wrap_pyfunction!(full_parameter_count, m)?)?;
    m.add_function(wrap_pyfunction!(generate_structure, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(grouped_krcc, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_mean, m)?)?;
    Ok(())
}
