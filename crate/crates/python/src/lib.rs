//! Python bindings. Volumes cross the boundary as flat C-order label lists
//! plus a `(z, y, x)` shape.

use std::sync::Arc;

use ndarray::Array3;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use surfdist::fitting::{self as fit, ModelKind};
use surfdist::instance::StarSurface;
use surfdist::lattice::LatticeKind;
use surfdist::loss::{self, LossConfig};
use surfdist::metrics::{self as m, Candidate, CandidateSet, NmsConfig};
use surfdist::volume::{self as vol, Grid};
use surfdist::{Error, Vec3};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

#[pyclass(frozen, module = "surfdist_py")]
struct Lattice {
    inner: Arc<surfdist::lattice::Lattice>,
}

#[pymethods]
impl Lattice {
    #[new]
    #[pyo3(signature = (rays, kind = None, anisotropy = [1.0, 1.0, 1.0]))]
    fn new(rays: usize, kind: Option<&str>, anisotropy: [f64; 3]) -> PyResult<Self> {
        let kind = match kind {
            Some(k) => parse::<LatticeKind>(k)?,
            None => LatticeKind::default_for(rays),
        };
        let inner = surfdist::lattice::Lattice::with_anisotropy(kind, rays, anisotropy).map_err(py_err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    #[getter]
    fn rays(&self) -> usize {
        self.inner.rays()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    #[getter]
    fn control_count(&self) -> usize {
        self.inner.control_count()
    }

    fn directions(&self) -> Vec<[f64; 3]> {
        self.inner.directions().as_slice().iter().map(|d| (*d).into()).collect()
    }

    fn triangles(&self) -> Vec<[usize; 3]> {
        self.inner.topology().triangles.clone()
    }

    fn __repr__(&self) -> String {
        format!("Lattice(rays={}, kind='{}')", self.rays(), self.kind())
    }
}

#[pyclass(frozen, skip_from_py_object, module = "surfdist_py")]
#[derive(Clone)]
struct InstanceShape {
    inner: surfdist::instance::InstanceShape,
}

#[pymethods]
impl InstanceShape {
    #[new]
    fn new(lattice: &Lattice, center: [f64; 3], distances: Vec<f64>) -> PyResult<Self> {
        surfdist::instance::InstanceShape::new(lattice.inner.clone(), Vec3::from(center), distances)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn uniform(lattice: &Lattice, center: [f64; 3], radius: f64) -> PyResult<Self> {
        surfdist::instance::InstanceShape::uniform(lattice.inner.clone(), Vec3::from(center), radius)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        surfdist::instance::InstanceShape::from_json(text)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.inner.center().into()
    }

    #[getter]
    fn distances(&self) -> Vec<f64> {
        self.inner.distances().to_vec()
    }

    #[pyo3(signature = (level = 2))]
    fn surface_samples(&self, level: u32) -> Vec<[f64; 3]> {
        self.inner.surface_samples(level).points.iter().map(|p| (*p).into()).collect()
    }

    /// `(vertices, faces)` of the flat mesh at `subdiv`.
    #[pyo3(signature = (subdiv = 2))]
    fn mesh(&self, subdiv: u32) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
        let mesh = self.inner.to_triangle_mesh(subdiv);
        (mesh.vertices.iter().map(|p| (*p).into()).collect(), mesh.faces)
    }

    #[pyo3(signature = (subdiv = 2))]
    fn to_obj(&self, subdiv: u32) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner
            .to_triangle_mesh(subdiv)
            .write_obj(&mut buf)
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(String::from_utf8(buf).expect("OBJ output is ASCII"))
    }

    #[pyo3(signature = (shape, anisotropy = [1.0, 1.0, 1.0], subdiv = 3))]
    fn voxelize(&self, shape: [usize; 3], anisotropy: [f64; 3], subdiv: u32) -> PyResult<LabelVolume> {
        let grid = Grid::new(shape, anisotropy).map_err(py_err)?;
        Ok(LabelVolume { inner: vol::voxelize(&self.inner, grid, subdiv) })
    }
}

#[pyclass(frozen, module = "surfdist_py")]
struct LabelVolume {
    inner: vol::LabelVolume,
}

#[pymethods]
impl LabelVolume {
    #[new]
    #[pyo3(signature = (labels, shape, anisotropy = [1.0, 1.0, 1.0]))]
    fn new(labels: Vec<u32>, shape: [usize; 3], anisotropy: [f64; 3]) -> PyResult<Self> {
        let arr = Array3::from_shape_vec(shape, labels).map_err(|e| PyValueError::new_err(e.to_string()))?;
        vol::LabelVolume::new(arr, anisotropy)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        vol::load_volume(path).map(|inner| Self { inner }).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        vol::save_volume(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn shape(&self) -> [usize; 3] {
        self.inner.shape()
    }

    #[getter]
    fn anisotropy(&self) -> [f64; 3] {
        self.inner.anisotropy()
    }

    fn labels(&self) -> Vec<u32> {
        self.inner.labels().iter().copied().collect()
    }

    fn instance_ids(&self) -> Vec<u32> {
        self.inner.instance_ids()
    }

    /// Flat C-order object probabilities.
    fn object_probabilities(&self) -> Vec<f64> {
        vol::object_probabilities(&self.inner).p.iter().copied().collect()
    }
}

#[pyfunction]
fn object_loss(p: f64, p_hat: f64) -> f64 {
    loss::object_loss(p, p_hat)
}

#[pyfunction]
#[pyo3(signature = (p, d, d_hat, lambda_reg = 1e-4))]
fn distance_loss(p: f64, d: Vec<f64>, d_hat: Vec<f64>, lambda_reg: f64) -> PyResult<f64> {
    let cfg = LossConfig { lambda_reg, ..LossConfig::default() };
    cfg.validate().map_err(py_err)?;
    loss::distance_loss(p, &d, &d_hat, &cfg).map_err(py_err)
}

/// `(object, distance, total)` for a prediction at `voxel`; the shape is
/// recentered on the voxel.
#[pyfunction]
#[pyo3(signature = (volume, voxel, p_hat, shape, lambda_d = 0.1, lambda_reg = 1e-4, level = 2))]
fn voxel_loss(
    volume: &LabelVolume,
    voxel: [usize; 3],
    p_hat: f64,
    shape: &InstanceShape,
    lambda_d: f64,
    lambda_reg: f64,
    level: u32,
) -> PyResult<(f64, f64, f64)> {
    let cfg = LossConfig { lambda_d, lambda_reg, sample_level: level };
    cfg.validate().map_err(py_err)?;
    let pred = loss::VoxelPrediction::new(&volume.inner.grid(), voxel, p_hat, &shape.inner).map_err(py_err)?;
    let p = vol::object_probabilities(&volume.inner).get(voxel);
    let terms = loss::voxel_loss_terms(p, &pred, &volume.inner, &cfg).map_err(py_err)?;
    Ok((terms.object, terms.distance, terms.total))
}

#[pyfunction]
fn sphere_mask(radius: usize) -> PyResult<LabelVolume> {
    fit::sphere_mask(radius).map(|inner| LabelVolume { inner }).map_err(py_err)
}

/// Dict with `radius, kind, rays, params, iou, rms_radial_error, converged`.
#[pyfunction]
fn reconstruct_sphere<'py>(py: Python<'py>, kind: &str, radius: usize, rays: usize) -> PyResult<Bound<'py, PyAny>> {
    let kind = parse::<ModelKind>(kind)?;
    let r = py.detach(|| fit::reconstruct_sphere(kind, radius, rays)).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("radius", r.radius)?;
    d.set_item("kind", r.kind.as_str())?;
    d.set_item("rays", r.rays)?;
    d.set_item("params", r.params)?;
    d.set_item("iou", r.iou)?;
    d.set_item("rms_radial_error", r.rms_radial_error)?;
    d.set_item("converged", r.converged)?;
    Ok(d.into_any())
}

#[pyfunction]
#[pyo3(signature = (volume, instance, rays, kind = None, iterations = 300))]
fn fit_mask(volume: &LabelVolume, instance: u32, rays: usize, kind: Option<&str>, iterations: usize) -> PyResult<(InstanceShape, f64)> {
    let kind = match kind {
        Some(k) => parse::<LatticeKind>(k)?,
        None => LatticeKind::default_for(rays),
    };
    let lattice = surfdist::lattice::Lattice::with_anisotropy(kind, rays, volume.inner.anisotropy()).map_err(py_err)?;
    let probs = vol::object_probabilities(&volume.inner);
    let center = volume
        .inner
        .labels()
        .indexed_iter()
        .filter(|(_, &l)| l == instance)
        .map(|((z, y, x), _)| [z, y, x])
        .fold(None::<([usize; 3], f64)>, |best, idx| {
            let p = probs.get(idx);
            match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((idx, p)),
            }
        })
        .map(|(idx, _)| volume.inner.world_position(idx))
        .ok_or_else(|| PyValueError::new_err(format!("instance {instance} is absent")))?;
    let init = surfdist::instance::InstanceShape::uniform(Arc::new(lattice), center, 1.0).map_err(py_err)?;
    let cfg = fit::FitConfig { iterations, ..fit::FitConfig::default() };
    let out = fit::fit_mask(&init, &volume.inner, instance, cfg).map_err(py_err)?;
    Ok((InstanceShape { inner: out.shape }, out.loss))
}

#[pyfunction]
fn pair_iou(a: &LabelVolume, b: &LabelVolume) -> PyResult<f64> {
    m::pair_iou(&a.inner, &b.inner).map_err(py_err)
}

/// `[(tau, {precision, recall, accuracy, f1, pq})]` for each threshold.
#[pyfunction]
#[pyo3(signature = (truth, pred, thresholds = None))]
fn evaluate(truth: &LabelVolume, pred: &LabelVolume, thresholds: Option<Vec<f64>>) -> PyResult<Vec<(f64, [f64; 5])>> {
    let taus = thresholds.unwrap_or_else(m::default_thresholds);
    let res = m::metrics_over_thresholds(&truth.inner, &pred.inner, &taus).map_err(py_err)?;
    Ok(res
        .per_threshold
        .into_iter()
        .map(|(t, x)| (t, [x.precision, x.recall, x.accuracy, x.f1, x.panoptic_quality]))
        .collect())
}

/// Indices of the kept candidates, highest probability first.
#[pyfunction]
#[pyo3(signature = (shapes, probs, shape, anisotropy = [1.0, 1.0, 1.0], prob_threshold = 0.5, iou_threshold = 0.4, subdiv = 2))]
fn nms(
    shapes: Vec<PyRef<'_, InstanceShape>>,
    probs: Vec<f64>,
    shape: [usize; 3],
    anisotropy: [f64; 3],
    prob_threshold: f64,
    iou_threshold: f64,
    subdiv: u32,
) -> PyResult<Vec<usize>> {
    if shapes.len() != probs.len() {
        return Err(py_err(Error::LengthMismatch { left: shapes.len(), right: probs.len() }));
    }
    let cands = CandidateSet::new(
        shapes
            .iter()
            .zip(probs)
            .map(|(s, prob)| Candidate { shape: s.inner.clone(), prob })
            .collect(),
    )
    .map_err(py_err)?;
    let grid = Grid::new(shape, anisotropy).map_err(py_err)?;
    m::nms_indices(&cands, grid, NmsConfig { prob_threshold, iou_threshold, subdiv }).map_err(py_err)
}

#[pymodule]
fn surfdist_py(module: &Bound<'_, PyModule>) -> PyResult<()> {
    module.add_class::<Lattice>()?;
    module.add_class::<InstanceShape>()?;
    module.add_class::<LabelVolume>()?;
    module.add_function(wrap_pyfunction!(object_loss, module)?)?;
    module.add_function(wrap_pyfunction!(distance_loss, module)?)?;
    module.add_function(wrap_pyfunction!(voxel_loss, module)?)?;
    module.add_function(wrap_pyfunction!(sphere_mask, module)?)?;
    module.add_function(wrap_pyfunction!(reconstruct_sphere, module)?)?;
    module.add_function(wrap_pyfunction!(fit_mask, module)?)?;
    module.add_function(wrap_pyfunction!(pair_iou, module)?)?;
    module.add_function(wrap_pyfunction!(evaluate, module)?)?;
    module.add_function(wrap_pyfunction!(nms, module)?)?;
    Ok(())
}
