//! Python bindings. Configurations, models and other structured values cross
//! the boundary as plain dicts in the same JSON form the files and the line
//! protocol use.

use contactseg::coverage::{self, CoverageConfig};
use contactseg::segmentation::{self, ContactSource, SegmentationError};
use contactseg::session::journal;
use contactseg::session::protocol;
use contactseg::surface::{self, CropEdit, CropRegion, SurfaceConfig};
use contactseg::synth::{self, DemoPath, GroundTruth, SceneSpec};
use contactseg::{ply, Vec3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts a dict (or `None`, meaning all defaults) through JSON.
fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let text = match obj {
        Some(o) if !o.is_none() => py.import("json")?.call_method1("dumps", (o,))?.extract::<String>()?,
        _ => "{}".to_string(),
    };
    serde_json::from_str(&text).map_err(value_error)
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(value_error)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn vecs(points: Vec<[f64; 3]>) -> Vec<Vec3> {
    points.into_iter().map(Vec3::from).collect()
}

fn arrays(points: &[Vec3]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

#[pyclass(module = "contactseg")]
struct PointCloud {
    inner: contactseg::PointCloud,
}

#[pymethods]
impl PointCloud {
    #[new]
    fn new(points: Vec<[f64; 3]>) -> PyResult<Self> {
        let inner = contactseg::PointCloud::new(vecs(points)).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Reads an ASCII PLY file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ply::load_ply(path).map_err(value_error)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        ply::save_ply(&self.inner, path).map_err(value_error)
    }

    fn points(&self) -> Vec<[f64; 3]> {
        arrays(self.inner.points())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(module = "contactseg")]
struct ContactPointSet {
    inner: contactseg::ContactPointSet,
}

#[pymethods]
impl ContactPointSet {
    #[new]
    fn new() -> Self {
        Self {
            inner: contactseg::ContactPointSet::new(),
        }
    }

    /// Appends one batch and returns the new revision. `source` is
    /// `"selected"` or `"demonstrated"`.
    #[pyo3(signature = (positions, source = "selected"))]
    fn add_batch(&mut self, py: Python<'_>, positions: Vec<[f64; 3]>, source: &str) -> PyResult<u64> {
        let source: ContactSource = from_py(py, Some(&source.into_pyobject(py)?.into_any()))?;
        self.inner.add_batch(&vecs(positions), source).map_err(value_error)
    }

    /// Removes the newest batch; returns the new revision, or `None` when
    /// the set was already empty.
    fn undo_batch(&mut self) -> Option<u64> {
        self.inner.undo_batch()
    }

    #[getter]
    fn revision(&self) -> u64 {
        self.inner.revision()
    }

    fn positions(&self) -> Vec<[f64; 3]> {
        arrays(self.inner.positions())
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    #[staticmethod]
    fn from_dict(py: Python<'_>, d: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self { inner: from_py(py, Some(d))? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(module = "contactseg")]
struct Snapshot {
    inner: contactseg::SegmentationSnapshot,
}

#[pymethods]
impl Snapshot {
    #[getter]
    fn t(&self) -> u64 {
        self.inner.t
    }

    #[getter]
    fn kind(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.kind())
    }

    #[getter]
    fn score(&self) -> f64 {
        self.inner.score
    }

    #[getter]
    fn model(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.model)
    }

    fn object_inliers(&self) -> Vec<usize> {
        self.inner.object_inliers.as_slice().to_vec()
    }

    fn contact_inliers(&self) -> Vec<usize> {
        self.inner.contact_inliers.as_slice().to_vec()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    #[staticmethod]
    fn from_dict(py: Python<'_>, d: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self { inner: from_py(py, Some(d))? })
    }
}

/// Guided RANSAC, one iteration per `step` call.
#[pyclass(module = "contactseg")]
struct Engine {
    inner: contactseg::Engine,
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let config = from_py(py, config)?;
        Ok(Self {
            inner: contactseg::Engine::new(config).map_err(value_error)?,
        })
    }

    /// Returns the incumbent after this iteration, or `None` while there are
    /// too few contact points or no candidate could be fitted yet.
    fn step(&mut self, cloud: &PointCloud, contacts: &ContactPointSet) -> PyResult<Option<Snapshot>> {
        wrap_step(self.inner.step(&cloud.inner, &contacts.inner))
    }

    /// One iteration of the object-sampling baseline.
    fn step_classical(&mut self, cloud: &PointCloud) -> PyResult<Option<Snapshot>> {
        wrap_step(self.inner.step_classical(&cloud.inner))
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration()
    }
}

fn wrap_step(r: Result<contactseg::SegmentationSnapshot, SegmentationError>) -> PyResult<Option<Snapshot>> {
    match r {
        Ok(inner) => Ok(Some(Snapshot { inner })),
        Err(SegmentationError::WaitingForInput { .. } | SegmentationError::NoCandidate) => Ok(None),
        Err(e) => Err(value_error(e)),
    }
}

#[pyclass(module = "contactseg")]
struct SurfacePatch {
    inner: surface::SurfacePatch,
}

#[pymethods]
impl SurfacePatch {
    #[staticmethod]
    #[pyo3(signature = (snapshot, cloud, config = None))]
    fn build(py: Python<'_>, snapshot: &Snapshot, cloud: &PointCloud, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let config: SurfaceConfig = from_py(py, config)?;
        let s = &snapshot.inner;
        let inner = surface::SurfacePatch::build(&s.model, &cloud.inner, &s.object_inliers, &config).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Clears the cells inside `polygon` (parameter-domain vertices) or the
    /// listed `cells`, and returns the crop status dict.
    #[pyo3(signature = (polygon = None, cells = None))]
    fn crop(&mut self, py: Python<'_>, polygon: Option<Vec<[f64; 2]>>, cells: Option<Vec<[i64; 2]>>) -> PyResult<Py<PyAny>> {
        let region = match (polygon, cells) {
            (Some(p), None) => CropRegion::Polygon(p),
            (None, Some(c)) => CropRegion::Cells(c),
            _ => return Err(PyValueError::new_err("give exactly one of polygon or cells")),
        };
        let edit = CropEdit {
            seq: self.inner.last_edit_seq().unwrap_or(0) + 1,
            region,
        };
        let (next, status) = surface::apply_crop(&self.inner, &edit).map_err(value_error)?;
        self.inner = next;
        to_py(py, &status)
    }

    #[getter]
    fn occupied_cells(&self) -> usize {
        self.inner.grid.occupied_count()
    }

    #[getter]
    fn sha256(&self) -> String {
        self.inner.content_hash()
    }

    /// Boundary rings in the parameter domain; outer rings counter-clockwise.
    fn boundary(&self) -> Vec<Vec<[f64; 2]>> {
        self.inner.boundary.iter().map(|r| r.iter().map(|p| [p.x, p.y]).collect()).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_error)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text).map_err(value_error)?,
        })
    }
}

/// `(position, approach, travel, contact)`.
type PoseTuple = ([f64; 3], [f64; 3], [f64; 3], bool);

#[pyclass(module = "contactseg")]
struct Trajectory {
    inner: coverage::Trajectory,
}

#[pymethods]
impl Trajectory {
    fn poses(&self) -> Vec<PoseTuple> {
        self.inner
            .poses
            .iter()
            .map(|p| {
                let a = |v: &Vec3| [v.x, v.y, v.z];
                (a(&p.position), a(&p.approach), a(&p.travel), p.contact)
            })
            .collect()
    }

    #[getter]
    fn lane_count(&self) -> usize {
        self.inner.lane_count
    }

    #[getter]
    fn contact_length(&self) -> f64 {
        self.inner.contact_length
    }

    fn to_json(&self) -> String {
        coverage::trajectory_to_json(&self.inner)
    }

    fn to_csv(&self) -> String {
        coverage::trajectory_to_csv(&self.inner)
    }
}

/// Plans raster coverage over a patch.
#[pyfunction]
#[pyo3(signature = (patch, config = None))]
fn plan(py: Python<'_>, patch: &SurfacePatch, config: Option<&Bound<'_, PyAny>>) -> PyResult<Trajectory> {
    let config: CoverageConfig = from_py(py, config)?;
    Ok(Trajectory {
        inner: coverage::plan_patch(&patch.inner, &config).map_err(value_error)?,
    })
}

#[pyfunction]
fn score(oi: usize, op: usize, ci: usize, cp: usize, complexity: f64) -> PyResult<f64> {
    segmentation::score(oi, op, ci, cp, complexity).map_err(value_error)
}

/// Samples a scene; returns the cloud and the ground-truth dict.
#[pyfunction]
fn generate_scene(py: Python<'_>, spec: &Bound<'_, PyAny>) -> PyResult<(PointCloud, Py<PyAny>)> {
    let spec: SceneSpec = from_py(py, Some(spec))?;
    let scene = synth::generate_scene(&spec).map_err(value_error)?;
    Ok((PointCloud { inner: scene.cloud }, to_py(py, &scene.truth)?))
}

/// Simulated demonstration; returns the cumulative contact set after every
/// batch.
#[pyfunction]
fn simulate_demo(py: Python<'_>, truth: &Bound<'_, PyAny>, path: &Bound<'_, PyAny>) -> PyResult<Vec<ContactPointSet>> {
    let truth: GroundTruth = from_py(py, Some(truth))?;
    let path: DemoPath = from_py(py, Some(path))?;
    let stream = synth::simulate_demo(&truth, &path).map_err(value_error)?;
    Ok(stream.revisions.into_iter().map(|inner| ContactPointSet { inner }).collect())
}

/// Checks one protocol request line; returns `(seq, kind)` or raises
/// `ValueError` whose message starts with the error code.
#[pyfunction]
fn parse_request(line: &str) -> PyResult<(u64, String)> {
    match protocol::parse_line(line) {
        Ok((seq, req)) => {
            let kind = match req {
                Some(r) => serde_json::to_value(&r).map_err(value_error)?["kind"].as_str().unwrap_or_default().to_string(),
                None => "ping".to_string(),
            };
            Ok((seq, kind))
        }
        Err(e) => Err(PyValueError::new_err(format!("{}: {}", e.code, e.message))),
    }
}

/// Re-runs a session log against its recorded cloud and returns a summary
/// dict; raises `ValueError` if the log is damaged or diverges.
#[pyfunction]
fn replay_log(py: Python<'_>, path: &str) -> PyResult<Py<PyAny>> {
    let log = journal::read_session_log(path).map_err(value_error)?;
    let cloud = journal::load_logged_cloud(&log).map_err(value_error)?;
    let out = journal::replay_session_log(&log, &cloud).map_err(value_error)?;
    let summary = serde_json::json!({
        "snapshots": out.snapshots,
        "kind": out.last.as_ref().map(|s| s.kind()),
        "patch_hash": out.patch.as_ref().map(|p| p.content_hash()),
        "poses": out.trajectory.as_ref().map(|t| t.poses.len()),
    });
    to_py(py, &summary)
}

#[pymodule]
#[pyo3(name = "contactseg")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PointCloud>()?;
    m.add_class::<ContactPointSet>()?;
    m.add_class::<Snapshot>()?;
    m.add_class::<Engine>()?;
    m.add_class::<SurfacePatch>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_demo, m)?)?;
    m.add_function(wrap_pyfunction!(parse_request, m)?)?;
    m.add_function(wrap_pyfunction!(replay_log, m)?)?;
    Ok(())
}
