//! Python bindings: `import mtcc_py`.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

create_exception!(mtcc_py, MtccError, PyValueError, "Base class of every mtcc failure.");
create_exception!(mtcc_py, EmptyMaskError, MtccError, "Segmentation found no foreground.");
create_exception!(
    mtcc_py,
    EmptyTemplateError,
    MtccError,
    "No valid cylinder could be built."
);
create_exception!(
    mtcc_py,
    KindMismatchError,
    MtccError,
    "Templates of different feature kinds."
);

fn to_py(e: mtcc::Error) -> PyErr {
    let msg = e.to_string();
    match e {
        mtcc::Error::EmptyMask => EmptyMaskError::new_err(msg),
        mtcc::Error::EmptyTemplate => EmptyTemplateError::new_err(msg),
        mtcc::Error::KindMismatch(..) => KindMismatchError::new_err(msg),
        _ => MtccError::new_err(msg),
    }
}

fn kind_of(s: &str) -> PyResult<mtcc::FeatureKind> {
    s.parse().map_err(to_py)
}

#[pyclass(frozen, name = "Minutia")]
#[derive(Clone)]
struct PyMinutia(mtcc::Minutia);

#[pymethods]
impl PyMinutia {
    #[new]
    #[pyo3(signature = (x, y, theta, quality = 1.0))]
    fn new(x: f64, y: f64, theta: f64, quality: f64) -> Self {
        Self(mtcc::Minutia::new(x, y, theta, quality))
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }

    /// Direction in [0, 2 pi).
    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    #[getter]
    fn quality(&self) -> f64 {
        self.0.quality
    }

    fn __repr__(&self) -> String {
        let m = &self.0;
        format!(
            "Minutia(x={}, y={}, theta={}, quality={})",
            m.x, m.y, m.theta, m.quality
        )
    }
}

/// Every tunable, as flat `section.key = value` entries.
#[pyclass(name = "Config")]
#[derive(Clone, Default)]
struct PyConfig(mtcc::Config);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        match text {
            Some(t) => mtcc::Config::parse(t).map(Self).map_err(to_py),
            None => Ok(Self::default()),
        }
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.0.set(key, value).map_err(MtccError::new_err)?;
        self.0.validate().map_err(to_py)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.0
            .entries()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| MtccError::new_err(format!("unknown key `{key}`")))
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }
}

#[pyclass(frozen, name = "GrayImage")]
struct PyGrayImage(mtcc::GrayImage);

#[pymethods]
impl PyGrayImage {
    #[new]
    fn new(width: u32, height: u32, pixels: Vec<u8>) -> PyResult<Self> {
        mtcc::GrayImage::new(width, height, pixels).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        mtcc::GrayImage::load(path).map(Self).map_err(to_py)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(to_py)
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }

    /// Row-major 8-bit pixels.
    fn pixels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.pixels())
    }
}

/// Mask plus orientation, frequency and energy maps, all as angles in [-pi, pi).
#[pyclass(frozen, name = "TextureMaps")]
struct PyTextureMaps(mtcc::TextureMaps);

#[pymethods]
impl PyTextureMaps {
    /// Maps with a full mask and zero angles; enough for kind `o`.
    #[staticmethod]
    fn blank(width: u32, height: u32) -> Self {
        Self(mtcc::TextureMaps::blank(mtcc::Mask::full(width, height)))
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.dims().0
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.dims().1
    }

    fn foreground_pixels(&self) -> usize {
        self.0.mask.count()
    }

    fn mask(&self) -> Vec<bool> {
        self.0.mask.bits().to_vec()
    }

    fn orientation(&self) -> Vec<f32> {
        self.0.orientation.data().to_vec()
    }

    fn frequency(&self) -> Vec<f32> {
        self.0.frequency.data().to_vec()
    }

    fn energy(&self) -> Vec<f32> {
        self.0.energy.data().to_vec()
    }
}

#[pyclass(frozen, name = "Template")]
struct PyTemplate(mtcc::Template);

#[pymethods]
impl PyTemplate {
    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        mtcc::deserialize_template(data)
            .map(Self)
            .map_err(|e| MtccError::new_err(e.to_string()))
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = mtcc::serialize_template(&self.0).map_err(to_py)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.label()
    }

    #[getter]
    fn image_dims(&self) -> (u32, u32) {
        self.0.image_dims
    }

    /// Centre minutiae of the stored cylinders.
    fn minutiae(&self) -> Vec<PyMinutia> {
        self.0.minutiae().map(|m| PyMinutia(*m)).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Template(kind={}, cylinders={})", self.0.kind, self.0.len())
    }
}

fn cfg(config: Option<&PyConfig>) -> mtcc::Config {
    config.map(|c| c.0.clone()).unwrap_or_default()
}

/// Parses `x y theta quality` lines, sorted by descending quality.
#[pyfunction]
fn parse_minutiae(text: &str) -> PyResult<Vec<PyMinutia>> {
    let ms = mtcc::parse_minutiae(text).map_err(to_py)?;
    Ok(ms.into_iter().map(PyMinutia).collect())
}

/// Segmentation, STFT analysis, Gabor filtering and SMQT.
#[pyfunction]
#[pyo3(signature = (image, config = None))]
fn enhance(py: Python<'_>, image: &PyGrayImage, config: Option<&PyConfig>) -> PyResult<(PyGrayImage, PyTextureMaps)> {
    let c = cfg(config);
    let (img, maps) = py
        .detach(|| mtcc::enhance_pipeline(&image.0, &c.enhancement, &c.stft))
        .map_err(to_py)?;
    Ok((PyGrayImage(img), PyTextureMaps(maps)))
}

#[pyfunction]
#[pyo3(signature = (kind, minutiae, maps, config = None))]
fn build_template(
    py: Python<'_>,
    kind: &str,
    minutiae: Vec<PyMinutia>,
    maps: &PyTextureMaps,
    config: Option<&PyConfig>,
) -> PyResult<PyTemplate> {
    let kind = kind_of(kind)?;
    let ms: Vec<mtcc::Minutia> = minutiae.into_iter().map(|m| m.0).collect();
    let c = cfg(config);
    py.detach(|| mtcc::build_template(kind, &ms, &maps.0, &c.cylinder))
        .map(PyTemplate)
        .map_err(to_py)
}

/// Global score of two templates of the same kind.
#[pyfunction]
#[pyo3(signature = (a, b, config = None))]
fn match_templates(py: Python<'_>, a: &PyTemplate, b: &PyTemplate, config: Option<&PyConfig>) -> PyResult<f64> {
    let c = cfg(config);
    py.detach(|| mtcc::global_score(&a.0, &b.0, &c.relax))
        .map(|r| r.score)
        .map_err(to_py)
}

/// `(reference, query, similarity, relaxed)` of one paired cylinder.
type PairRow = (usize, usize, f64, f64);

/// Score plus the paired cylinders as `(reference, query, similarity, relaxed)`.
#[pyfunction]
#[pyo3(signature = (a, b, config = None))]
fn match_details(
    py: Python<'_>,
    a: &PyTemplate,
    b: &PyTemplate,
    config: Option<&PyConfig>,
) -> PyResult<(f64, Vec<PairRow>)> {
    let c = cfg(config);
    let r = py.detach(|| mtcc::global_score(&a.0, &b.0, &c.relax)).map_err(to_py)?;
    let pairs = r
        .pairs
        .iter()
        .map(|p| (p.reference, p.query, p.similarity, p.relaxed))
        .collect();
    Ok((r.score, pairs))
}

#[pyfunction]
fn compute_eer(genuine: Vec<f64>, impostor: Vec<f64>) -> PyResult<f64> {
    mtcc::compute_eer(&genuine, &impostor).map_err(to_py)
}

/// FNMR at the lowest threshold with FMR <= 0.1%.
#[pyfunction]
fn compute_fmr1000(genuine: Vec<f64>, impostor: Vec<f64>) -> PyResult<f64> {
    mtcc::compute_fmr1000(&genuine, &impostor)
        .map(|f| f.fnmr)
        .map_err(to_py)
}

#[pyfunction]
fn default_config() -> String {
    mtcc::Config::default().to_text()
}

/// A rendered impression of a seeded synthetic finger and its minutiae.
#[pyfunction]
#[pyo3(signature = (seed, impression, width = 360, height = 400))]
fn synthetic_impression(seed: u64, impression: u64, width: u32, height: u32) -> (PyGrayImage, Vec<PyMinutia>) {
    let f = mtcc::synthetic::SyntheticFinger::generate(seed);
    let imp = f.impression(impression, width, height, &mtcc::synthetic::ImpressionParams::default());
    (
        PyGrayImage(imp.image),
        imp.minutiae.into_iter().map(PyMinutia).collect(),
    )
}

#[pymodule]
fn mtcc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("MtccError", py.get_type::<MtccError>())?;
    m.add("EmptyMaskError", py.get_type::<EmptyMaskError>())?;
    m.add("EmptyTemplateError", py.get_type::<EmptyTemplateError>())?;
    m.add("KindMismatchError", py.get_type::<KindMismatchError>())?;
    m.add_class::<PyMinutia>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyGrayImage>()?;
    m.add_class::<PyTextureMaps>()?;
    m.add_class::<PyTemplate>()?;
    m.add_function(wrap_pyfunction!(parse_minutiae, m)?)?;
    m.add_function(wrap_pyfunction!(enhance, m)?)?;
    m.add_function(wrap_pyfunction!(build_template, m)?)?;
    m.add_function(wrap_pyfunction!(match_templates, m)?)?;
    m.add_function(wrap_pyfunction!(match_details, m)?)?;
    m.add_function(wrap_pyfunction!(compute_eer, m)?)?;
    m.add_function(wrap_pyfunction!(compute_fmr1000, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_impression, m)?)?;
    Ok(())
}
