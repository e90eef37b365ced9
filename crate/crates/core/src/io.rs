//! File formats: maps, traced regions, builder parameters, scenario
//! configs, reports, raster masks and the simulator artifact bundle.
//!
//! Everything except masks is JSON carrying a `format_version`. Angles are
//! written in degrees.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::builder::BuilderParams;
use crate::geometry::{Point2, Polyline};
use crate::map_model::{Category, ClipWindow, ElementId, Frame, MapElement, Pose, VectorMap};
use crate::metrics::EvalReport;
use crate::rasterizer::{BevMask, Footprint, GridSpec, TracedRegion};
use crate::simulator::{ScenarioConfig, ScenarioOutcome};

pub const FORMAT_VERSION: u32 = 1;
pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Validation { path: PathBuf, message: String },
}

impl IoError {
    /// True for malformed or invalid content, as opposed to I/O failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, IoError::Io { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn validation(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Validation { path: path.to_path_buf(), message: message.into() }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn check_version(version: u32, path: &Path) -> Result<(), IoError> {
    if version != FORMAT_VERSION {
        return Err(validation(path, format!("unsupported format_version {version}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub x: f64,
    pub y: f64,
    pub yaw_deg: f64,
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        Self { x: p.x, y: p.y, yaw_deg: p.yaw_degrees() }
    }
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        Pose::from_degrees(r.x, r.y, r.yaw_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    category: Category,
    closed: bool,
    score: f64,
    points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapRecord {
    format_version: u32,
    frame: Frame,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose: Option<PoseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    merge: Option<bool>,
    elements: Vec<ElementRecord>,
}

/// A map file together with its optional per-frame annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct MapDocument {
    pub map: VectorMap,
    /// Ego pose of the frame, for ego-frame maps.
    pub pose: Option<Pose>,
    /// Whether the builder merged this frame.
    pub merge: Option<bool>,
}

impl MapDocument {
    pub fn plain(map: VectorMap) -> Self {
        Self { map, pose: None, merge: None }
    }
}

pub fn map_to_string(doc: &MapDocument) -> String {
    let record = MapRecord {
        format_version: FORMAT_VERSION,
        frame: doc.map.frame(),
        pose: doc.pose.map(PoseRecord::from),
        merge: doc.merge,
        elements: doc
            .map
            .elements()
            .iter()
            .map(|e| ElementRecord {
                id: Some(e.id.0),
                category: e.category,
                closed: e.geometry.is_closed(),
                score: e.score,
                points: e.geometry.points().iter().map(|p| [p.x, p.y]).collect(),
            })
            .collect(),
    };
    to_json(&record)
}

/// Parses a map document; `path` only labels diagnostics.
pub fn map_from_str(text: &str, path: &Path) -> Result<MapDocument, IoError> {
    let record: MapRecord = parse_json(text, path)?;
    check_version(record.format_version, path)?;
    let mut elements = Vec::with_capacity(record.elements.len());
    for (index, r) in record.elements.into_iter().enumerate() {
        let id = ElementId(r.id.unwrap_or(index as u64));
        let context = |msg: String| validation(path, format!("element {index} (id {}): {msg}", id.0));
        let points: Vec<Point2> = r.points.iter().map(|&[x, y]| Point2::new(x, y)).collect();
        let geometry = Polyline::new(points, r.closed).map_err(|e| context(e.to_string()))?;
        let element = MapElement::new(id, r.category, geometry, r.score).map_err(|e| context(e.to_string()))?;
        elements.push(element);
    }
    let map = VectorMap::new(record.frame, elements).map_err(|e| validation(path, e.to_string()))?;
    if record.pose.is_some_and(|p| !Pose::from(p).is_finite()) {
        return Err(validation(path, "pose must be finite"));
    }
    Ok(MapDocument { map, pose: record.pose.map(Pose::from), merge: record.merge })
}

pub fn load_map_document(path: &Path) -> Result<MapDocument, IoError> {
    map_from_str(&read_text(path)?, path)
}

pub fn load_map(path: impl AsRef<Path>) -> Result<VectorMap, IoError> {
    Ok(load_map_document(path.as_ref())?.map)
}

pub fn save_map_document(doc: &MapDocument, path: &Path) -> Result<(), IoError> {
    write_text(path, &map_to_string(doc))
}

pub fn save_map(map: &VectorMap, path: impl AsRef<Path>) -> Result<(), IoError> {
    save_map_document(&MapDocument::plain(map.clone()), path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FootprintRecord {
    pose: PoseRecord,
    window: ClipWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TracedRecord {
    format_version: u32,
    footprints: Vec<FootprintRecord>,
}

pub fn traced_to_string(region: &TracedRegion) -> String {
    to_json(&TracedRecord {
        format_version: FORMAT_VERSION,
        footprints: region
            .footprints()
            .iter()
            .map(|f| FootprintRecord { pose: f.pose.into(), window: f.window })
            .collect(),
    })
}

pub fn traced_from_str(text: &str, path: &Path) -> Result<TracedRegion, IoError> {
    let record: TracedRecord = parse_json(text, path)?;
    check_version(record.format_version, path)?;
    let mut footprints = Vec::with_capacity(record.footprints.len());
    for (i, f) in record.footprints.into_iter().enumerate() {
        let pose = Pose::from(f.pose);
        if !pose.is_finite() {
            return Err(validation(path, format!("footprint {i}: pose must be finite")));
        }
        f.window.validate().map_err(|e| validation(path, format!("footprint {i}: {e}")))?;
        footprints.push(Footprint { pose, window: f.window });
    }
    Ok(TracedRegion::from_footprints(footprints))
}

pub fn load_traced(path: &Path) -> Result<TracedRegion, IoError> {
    traced_from_str(&read_text(path)?, path)
}

pub fn save_traced(region: &TracedRegion, path: &Path) -> Result<(), IoError> {
    write_text(path, &traced_to_string(region))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRecord {
    format_version: u32,
    params: BuilderParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigRecord {
    format_version: u32,
    config: ScenarioConfig,
}

pub fn params_to_string(params: &BuilderParams) -> String {
    to_json(&ParamsRecord { format_version: FORMAT_VERSION, params: params.clone() })
}

pub fn params_from_str(text: &str, path: &Path) -> Result<BuilderParams, IoError> {
    let record: ParamsRecord = parse_json(text, path)?;
    check_version(record.format_version, path)?;
    let params = record.params;
    params.validate().map_err(|e| validation(path, e.to_string()))?;
    Ok(params)
}

pub fn load_params(path: &Path) -> Result<BuilderParams, IoError> {
    params_from_str(&read_text(path)?, path)
}

pub fn config_to_string(cfg: &ScenarioConfig) -> String {
    to_json(&ConfigRecord { format_version: FORMAT_VERSION, config: cfg.clone() })
}

pub fn config_from_str(text: &str, path: &Path) -> Result<ScenarioConfig, IoError> {
    let record: ConfigRecord = parse_json(text, path)?;
    check_version(record.format_version, path)?;
    let cfg = record.config;
    cfg.validate().map_err(|e| validation(path, e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, IoError> {
    config_from_str(&read_text(path)?, path)
}

/// SHA-256 of the compact JSON form of a scenario config.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// A report plus what is needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub format_version: u32,
    pub library_version: String,
    /// The subcommand or entry point that produced the report.
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ScenarioConfig>,
    /// Input files, for reports computed from files.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    pub report: EvalReport,
}

impl ReportFile {
    pub fn for_scenario(cfg: &ScenarioConfig, report: EvalReport) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            library_version: LIBRARY_VERSION.into(),
            command: "simulate".into(),
            seed: Some(cfg.seed),
            config_hash: Some(config_hash(cfg)),
            config: Some(cfg.clone()),
            inputs: Vec::new(),
            report,
        }
    }

    pub fn for_inputs(command: &str, inputs: Vec<String>, report: EvalReport) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            library_version: LIBRARY_VERSION.into(),
            command: command.into(),
            seed: None,
            config_hash: None,
            config: None,
            inputs,
            report,
        }
    }
}

fn check_finite(v: &serde_json::Value, at: &str) -> Result<(), String> {
    match v {
        serde_json::Value::Number(n) if n.as_f64().is_some_and(|f| !f.is_finite()) => Err(at.to_string()),
        serde_json::Value::Array(a) => a.iter().enumerate().try_for_each(|(i, x)| check_finite(x, &format!("{at}[{i}]"))),
        serde_json::Value::Object(o) => o.iter().try_for_each(|(k, x)| check_finite(x, &format!("{at}.{k}"))),
        _ => Ok(()),
    }
}

pub fn report_to_string(report: &ReportFile) -> String {
    to_json(report)
}

pub fn report_from_str(text: &str, path: &Path) -> Result<ReportFile, IoError> {
    let r: ReportFile = parse_json(text, path)?;
    check_version(r.format_version, path)?;
    Ok(r)
}

pub fn load_report(path: &Path) -> Result<ReportFile, IoError> {
    report_from_str(&read_text(path)?, path)
}

pub fn save_report(report: &ReportFile, path: &Path) -> Result<(), IoError> {
    let value = serde_json::to_value(report).expect("report serializes");
    check_finite(&value, "report").map_err(|at| validation(path, format!("non-finite value at {at}")))?;
    write_text(path, &report_to_string(report))
}

/// Text grid: a `key value` header, a `values` line, then one line per row.
pub fn mask_to_string(mask: &BevMask, spec: &GridSpec, tau: f64, pose: &Pose) -> String {
    let mut s = String::new();
    let p = PoseRecord::from(*pose);
    let _ = writeln!(s, "format_version {FORMAT_VERSION}");
    let _ = writeln!(s, "category {}", mask.category.name());
    let _ = writeln!(s, "rows {}", mask.rows);
    let _ = writeln!(s, "cols {}", mask.cols);
    let _ = writeln!(s, "resolution {}", spec.resolution);
    let _ = writeln!(s, "tau {tau}");
    let _ = writeln!(s, "pose {} {} {}", p.x, p.y, p.yaw_deg);
    s.push_str("values\n");
    for row in mask.values.chunks(mask.cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn mask_from_str(text: &str, path: &Path) -> Result<BevMask, IoError> {
    let bad = |line: usize, message: String| IoError::Parse { path: path.to_path_buf(), line, column: 1, message };
    let mut lines = text.lines().enumerate();
    let (mut category, mut rows, mut cols) = (None, None, None);
    for (i, line) in lines.by_ref() {
        if line == "values" {
            break;
        }
        let (key, value) = line.split_once(' ').ok_or_else(|| bad(i + 1, format!("expected `key value`, got {line:?}")))?;
        match key {
            "format_version" => {
                let v: u32 = value.parse().map_err(|_| bad(i + 1, "bad format_version".into()))?;
                check_version(v, path)?;
            }
            "category" => {
                category = Some(Category::from_name(value).ok_or_else(|| bad(i + 1, format!("unknown category {value}")))?)
            }
            "rows" => rows = Some(value.parse::<usize>().map_err(|e| bad(i + 1, e.to_string()))?),
            "cols" => cols = Some(value.parse::<usize>().map_err(|e| bad(i + 1, e.to_string()))?),
            "resolution" | "tau" | "pose" => {}
            _ => return Err(bad(i + 1, format!("unknown header key {key}"))),
        }
    }
    let (Some(category), Some(rows), Some(cols)) = (category, rows, cols) else {
        return Err(validation(path, "mask header needs category, rows and cols"));
    };
    let mut values = Vec::with_capacity(rows * cols);
    for (i, line) in lines {
        for tok in line.split_whitespace() {
            values.push(tok.parse::<f64>().map_err(|e| bad(i + 1, e.to_string()))?);
        }
    }
    if values.len() != rows * cols {
        return Err(validation(path, format!("expected {} values, found {}", rows * cols, values.len())));
    }
    Ok(BevMask { category, rows, cols, values })
}

pub fn save_mask(mask: &BevMask, spec: &GridSpec, tau: f64, pose: &Pose, path: &Path) -> Result<(), IoError> {
    write_text(path, &mask_to_string(mask, spec, tau, pose))
}

pub fn load_mask(path: &Path) -> Result<BevMask, IoError> {
    mask_from_str(&read_text(path)?, path)
}

pub const GT_GLOBAL_FILE: &str = "gt_global.json";
pub const BUILT_GLOBAL_FILE: &str = "built_global.json";
pub const TRACED_FILE: &str = "traced_region.json";
pub const REPORT_FILE: &str = "report.json";
pub const FRAMES_DIR: &str = "frames";

pub fn frame_file_name(index: usize, kind: &str) -> String {
    format!("{index:04}_{kind}.json")
}

/// Writes the simulator artifact bundle under `dir`.
pub fn write_bundle(dir: &Path, cfg: &ScenarioConfig, outcome: &ScenarioOutcome) -> Result<ReportFile, IoError> {
    save_map(&outcome.gt, dir.join(GT_GLOBAL_FILE))?;
    save_map(outcome.state.map(), dir.join(BUILT_GLOBAL_FILE))?;
    save_traced(&outcome.traced, &dir.join(TRACED_FILE))?;
    let frames = dir.join(FRAMES_DIR);
    for (i, f) in outcome.frames.iter().enumerate() {
        let pred = MapDocument { map: f.pred.clone(), pose: Some(f.pose), merge: Some(f.merged) };
        save_map_document(&pred, &frames.join(frame_file_name(i, "pred")))?;
        let gt = MapDocument { map: f.gt.clone(), pose: Some(f.pose), merge: None };
        save_map_document(&gt, &frames.join(frame_file_name(i, "gt")))?;
    }
    let report = ReportFile::for_scenario(cfg, outcome.report.clone());
    save_report(&report, &dir.join(REPORT_FILE))?;
    Ok(report)
}

/// Frame files of one kind (`pred` or `gt`) in a frames directory, in
/// index order.
pub fn load_frames(dir: &Path, kind: &str) -> Result<Vec<MapDocument>, IoError> {
    let suffix = format!("_{kind}.json");
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(&suffix))
        .collect();
    names.sort();
    let mut docs = Vec::with_capacity(names.len());
    for name in names {
        let path = dir.join(&name);
        let doc = load_map_document(&path)?;
        if doc.map.frame() != Frame::Ego {
            return Err(validation(&path, "frame files hold ego-frame maps"));
        }
        if doc.pose.is_none() {
            return Err(validation(&path, "frame files need a pose"));
        }
        docs.push(doc);
    }
    Ok(docs)
}
