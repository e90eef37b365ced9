//! Python bindings for the global map builder.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use globalmap::builder::BuilderParams as CoreParams;
use globalmap::geometry::{buffered_iou as core_iou, chamfer_distance as core_chamfer, Point2};
use globalmap::io;
use globalmap::map_model::{clip_map as core_clip, fragments_to_local_map, map_to_global};
use globalmap::metrics::{ap_stream, gap_map, MetricTable};
use globalmap::rasterizer::{clip_and_rasterize, Footprint};
use globalmap::{Category, ClipWindow, ElementId, Frame, GlobalMapState, MapElement, Polyline as CorePolyline};
use std::path::Path;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_points(points: Vec<(f64, f64)>) -> Vec<Point2> {
    points.into_iter().map(Point2::from).collect()
}

fn from_points(points: &[Point2]) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p.x, p.y)).collect()
}

fn parse_frame(frame: &str) -> PyResult<Frame> {
    match frame {
        "global" => Ok(Frame::Global),
        "ego" => Ok(Frame::Ego),
        _ => Err(err(format!("frame must be 'global' or 'ego', got {frame:?}"))),
    }
}

fn parse_category(name: &str) -> PyResult<Category> {
    Category::from_name(name).ok_or_else(|| err(format!("unknown category {name:?}")))
}

#[pyclass(module = "pyglobalmap", from_py_object)]
#[derive(Clone)]
struct Polyline {
    inner: CorePolyline,
}

#[pymethods]
impl Polyline {
    #[new]
    #[pyo3(signature = (points, closed = false))]
    fn new(points: Vec<(f64, f64)>, closed: bool) -> PyResult<Self> {
        Ok(Self { inner: CorePolyline::new(to_points(points), closed).map_err(err)? })
    }

    #[getter]
    fn points(&self) -> Vec<(f64, f64)> {
        from_points(self.inner.points())
    }

    #[getter]
    fn closed(&self) -> bool {
        self.inner.is_closed()
    }

    fn length(&self) -> f64 {
        self.inner.length()
    }

    fn resample(&self, n: usize) -> PyResult<Self> {
        Ok(Self { inner: self.inner.resample(n).map_err(err)? })
    }

    fn distance_to(&self, x: f64, y: f64) -> f64 {
        self.inner.distance_to(Point2::new(x, y))
    }

    /// Returns `(arc_length, distance)` of the closest point.
    fn project(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.inner.project(Point2::new(x, y));
        (p.arc_length, p.distance)
    }

    fn __len__(&self) -> usize {
        self.inner.num_points()
    }

    fn __repr__(&self) -> String {
        format!("Polyline({} points, closed={}, length={:.3})", self.inner.num_points(), self.inner.is_closed(), self.inner.length())
    }
}

#[pyclass(module = "pyglobalmap", from_py_object)]
#[derive(Clone, Copy)]
struct Pose {
    inner: globalmap::Pose,
}

#[pymethods]
impl Pose {
    #[new]
    #[pyo3(signature = (x, y, yaw_deg = 0.0))]
    fn new(x: f64, y: f64, yaw_deg: f64) -> Self {
        Self { inner: globalmap::Pose::from_degrees(x, y, yaw_deg) }
    }

    #[getter]
    fn x(&self) -> f64 {
        self.inner.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.inner.y
    }

    #[getter]
    fn yaw_deg(&self) -> f64 {
        self.inner.yaw_degrees()
    }

    fn ego_to_global(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.inner.ego_to_global(Point2::new(x, y));
        (p.x, p.y)
    }

    fn global_to_ego(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.inner.global_to_ego(Point2::new(x, y));
        (p.x, p.y)
    }

    fn __repr__(&self) -> String {
        format!("Pose(x={}, y={}, yaw_deg={})", self.inner.x, self.inner.y, self.inner.yaw_degrees())
    }
}

/// Elements are exchanged as `(id, category, points, closed, score)` tuples.
type ElementTuple = (u64, String, Vec<(f64, f64)>, bool, f64);

#[pyclass(module = "pyglobalmap", from_py_object)]
#[derive(Clone)]
struct VectorMap {
    inner: globalmap::VectorMap,
}

#[pymethods]
impl VectorMap {
    #[new]
    #[pyo3(signature = (frame, elements = Vec::new()))]
    fn new(frame: &str, elements: Vec<ElementTuple>) -> PyResult<Self> {
        let frame = parse_frame(frame)?;
        let elements = elements
            .into_iter()
            .map(|(id, category, points, closed, score)| {
                let geometry = CorePolyline::new(to_points(points), closed).map_err(err)?;
                MapElement::new(ElementId(id), parse_category(&category)?, geometry, score).map_err(err)
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: globalmap::VectorMap::new(frame, elements).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: io::load_map(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_map(&self.inner, path).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: io::map_from_str(text, Path::new("<string>")).map_err(err)?.map })
    }

    fn to_json(&self) -> String {
        io::map_to_string(&io::MapDocument::plain(self.inner.clone()))
    }

    #[getter]
    fn frame(&self) -> String {
        self.inner.frame().to_string()
    }

    fn elements(&self) -> Vec<ElementTuple> {
        self.inner
            .elements()
            .iter()
            .map(|e| {
                (e.id.0, e.category.name().to_string(), from_points(e.geometry.points()), e.geometry.is_closed(), e.score)
            })
            .collect()
    }

    fn count(&self, category: &str) -> PyResult<usize> {
        Ok(self.inner.of_category(parse_category(category)?).count())
    }

    /// Moves an ego-frame map into the global frame.
    fn to_global(&self, pose: &Pose) -> PyResult<Self> {
        Ok(Self { inner: map_to_global(&self.inner, &pose.inner).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("VectorMap(frame={}, {} elements)", self.inner.frame(), self.inner.len())
    }
}

#[pyclass(module = "pyglobalmap", from_py_object)]
#[derive(Clone)]
struct BuilderParams {
    inner: CoreParams,
}

#[pymethods]
impl BuilderParams {
    /// Per-category match distances; NMS buffers are set equal to them.
    #[new]
    #[pyo3(signature = (road = 2.0, lane = 1.0, ped = 0.5, nms_iou_threshold = 0.5, nms_enabled = true))]
    fn new(road: f64, lane: f64, ped: f64, nms_iou_threshold: f64, nms_enabled: bool) -> PyResult<Self> {
        let mut inner = CoreParams::with_distances(road, lane, ped);
        inner.nms_iou_threshold = nms_iou_threshold;
        inner.nms_enabled = nms_enabled;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: io::params_from_str(text, Path::new("<string>")).map_err(err)? })
    }

    fn to_json(&self) -> String {
        io::params_to_string(&self.inner)
    }
}

#[pyclass(module = "pyglobalmap")]
struct GlobalMapBuilder {
    state: GlobalMapState,
    params: CoreParams,
    traced: globalmap::TracedRegion,
}

#[pymethods]
impl GlobalMapBuilder {
    #[new]
    #[pyo3(signature = (params = None, initial = None))]
    fn new(params: Option<BuilderParams>, initial: Option<VectorMap>) -> PyResult<Self> {
        let state = match initial {
            Some(m) => GlobalMapState::from_map(m.inner).map_err(err)?,
            None => GlobalMapState::new(),
        };
        Ok(Self { state, params: params.map(|p| p.inner).unwrap_or_default(), traced: Default::default() })
    }

    /// Merges one ego-frame prediction; returns `(matched, appended, suppressed)`.
    fn merge(&mut self, local: &VectorMap, pose: &Pose) -> PyResult<(usize, usize, usize)> {
        let s = self.state.merge_step(&local.inner, &pose.inner, &self.params).map_err(err)?;
        self.traced.update(pose.inner, self.params.window);
        Ok((s.matched, s.appended, s.suppressed))
    }

    #[getter]
    fn map(&self) -> VectorMap {
        VectorMap { inner: self.state.map().clone() }
    }

    /// Poses merged so far, as `(x, y, yaw_deg)`.
    fn traced_poses(&self) -> Vec<(f64, f64, f64)> {
        self.traced.footprints().iter().map(|f: &Footprint| (f.pose.x, f.pose.y, f.pose.yaw_degrees())).collect()
    }

    /// Ground truth restricted to the area covered by merged frames.
    fn clip_to_traced(&self, map: &VectorMap) -> PyResult<VectorMap> {
        Ok(VectorMap { inner: self.traced.clip_map(&map.inner).map_err(err)? })
    }

    /// `len(categories) + 1` soft masks around `pose`, as
    /// `(category, rows, cols, values)`.
    #[pyo3(signature = (pose, resolution = 0.3, tau = 1.0))]
    fn rasterize(&self, pose: &Pose, resolution: f64, tau: f64) -> PyResult<Vec<(String, usize, usize, Vec<f64>)>> {
        let spec = globalmap::GridSpec::new(self.params.window, resolution).map_err(err)?;
        let masks = clip_and_rasterize(self.state.map(), &self.traced, &pose.inner, &spec, tau).map_err(err)?;
        Ok(masks.into_iter().map(|m| (m.category.name().to_string(), m.rows, m.cols, m.values)).collect())
    }
}

#[pyfunction]
fn chamfer_distance(a: &Polyline, b: &Polyline) -> f64 {
    core_chamfer(&a.inner, &b.inner)
}

#[pyfunction]
fn buffered_iou(a: &Polyline, b: &Polyline, radius: f64) -> PyResult<f64> {
    core_iou(&a.inner, &b.inner, radius).map_err(err)
}

/// Clips a global map to the window at `pose`, returning an ego-frame map.
#[pyfunction]
#[pyo3(signature = (map, pose, length = 60.0, width = 30.0))]
fn clip_map(map: &VectorMap, pose: &Pose, length: f64, width: f64) -> PyResult<VectorMap> {
    let window = ClipWindow::new(length, width).map_err(err)?;
    let fragments = core_clip(&map.inner, &pose.inner, &window).map_err(err)?;
    Ok(VectorMap { inner: fragments_to_local_map(fragments) })
}

fn table_dict<'py>(py: Python<'py>, table: &MetricTable) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", table.mean)?;
    d.set_item("thresholds", table.thresholds.clone())?;
    for c in &table.categories {
        d.set_item(c.category.name(), c.per_threshold.clone())?;
    }
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, thresholds = vec![0.5, 1.0, 1.5]))]
fn gap<'py>(py: Python<'py>, pred: &VectorMap, gt: &VectorMap, thresholds: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    table_dict(py, &gap_map(&pred.inner, &gt.inner, &thresholds).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (preds, gts, thresholds = vec![0.5, 1.0, 1.5]))]
fn ap<'py>(py: Python<'py>, preds: Vec<VectorMap>, gts: Vec<VectorMap>, thresholds: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let preds: Vec<_> = preds.into_iter().map(|m| m.inner).collect();
    let gts: Vec<_> = gts.into_iter().map(|m| m.inner).collect();
    table_dict(py, &ap_stream(&preds, &gts, &thresholds).map_err(err)?)
}

/// Runs a scenario from a config JSON string (the scenario file format).
/// Returns `(report_json, built_map, gt_map)`.
#[pyfunction]
fn run_scenario(config_json: &str) -> PyResult<(String, VectorMap, VectorMap)> {
    let cfg = io::config_from_str(config_json, Path::new("<string>")).map_err(err)?;
    let out = globalmap::simulator::run_scenario(&cfg).map_err(err)?;
    let report = io::report_to_string(&io::ReportFile::for_scenario(&cfg, out.report.clone()));
    Ok((report, VectorMap { inner: out.state.into_map() }, VectorMap { inner: out.gt }))
}

/// The default scenario config as JSON.
#[pyfunction]
fn default_scenario_config() -> String {
    io::config_to_string(&Default::default())
}

#[pymodule]
fn pyglobalmap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Polyline>()?;
    m.add_class::<Pose>()?;
    m.add_class::<VectorMap>()?;
    m.add_class::<BuilderParams>()?;
    m.add_class::<GlobalMapBuilder>()?;
    m.add_function(wrap_pyfunction!(chamfer_distance, m)?)?;
    m.add_function(wrap_pyfunction!(buffered_iou, m)?)?;
    m.add_function(wrap_pyfunction!(clip_map, m)?)?;
    m.add_function(wrap_pyfunction!(gap, m)?)?;
    m.add_function(wrap_pyfunction!(ap, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(default_scenario_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
