//! Synthetic scenarios: a procedural Manhattan-grid world, a boustrophedon
//! drive through it, a noisy perception stand-in, and the closed loop that
//! feeds perception into the builder and scores the result.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{BuilderError, BuilderParams, GlobalMapState};
use crate::geometry::{Point2, Polyline};
use crate::map_model::{
    clip_map, fragments_to_local_map, Category, ClipWindow, ElementId, Frame, MapElement, MapError, Pose,
    VectorMap,
};
use crate::metrics::{ap_stream, gap_map, EvalReport, MetricsError, ReportMetadata, DEFAULT_THRESHOLDS};
use crate::rasterizer::TracedRegion;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("cannot read initial map {path}: {message}")]
    InitialMap { path: PathBuf, message: String },
    #[error(transparent)]
    Builder(#[from] BuilderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Map(#[from] MapError),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub block_size: f64,
    pub road_width: f64,
    pub lanes_per_road: usize,
    pub crossing_length: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            blocks_x: 2,
            blocks_y: 2,
            block_size: 50.0,
            road_width: 12.0,
            lanes_per_road: 3,
            crossing_length: 4.0,
            seed: 0,
        }
    }
}

/// Largest grid-line offset, as a fraction of `block_size`.
pub const GRID_JITTER: f64 = 0.1;

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.blocks_x == 0 || self.blocks_y == 0 || self.lanes_per_road == 0 {
            return Err(invalid("block counts and lanes_per_road must be at least 1"));
        }
        for (name, v) in [
            ("block_size", self.block_size),
            ("road_width", self.road_width),
            ("crossing_length", self.crossing_length),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.road_width <= 1.0 {
            return Err(invalid("road_width must exceed 1 m to leave room for crossings"));
        }
        // Shortest block after jitter must still hold the crossings and a
        // stretch of lane divider on every road segment.
        let shortest = self.block_size * (1.0 - 2.0 * GRID_JITTER);
        let reserved = self.road_width + 2.0 * self.crossing_length + 4.0;
        if shortest <= reserved + 1.0 {
            return Err(invalid(format!(
                "block_size {} too small for road_width {} and crossing_length {}",
                self.block_size, self.road_width, self.crossing_length
            )));
        }
        Ok(())
    }

    /// Element counts of [`generate_ground_truth`]: with
    /// `S = bx(by+1) + by(bx+1)` road segments, there are `bx·by` boundaries,
    /// `(lanes−1)·S` dividers and `2·S` crossings (one per segment end).
    pub fn expected_counts(&self) -> (usize, usize, usize) {
        let (bx, by) = (self.blocks_x, self.blocks_y);
        let segments = bx * (by + 1) + by * (bx + 1);
        (bx * by, (self.lanes_per_road - 1) * segments, 2 * segments)
    }
}

/// Road centreline positions: vertical roads at `xs`, horizontal at `ys`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

pub fn road_grid(cfg: &WorldConfig) -> RoadGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let amp = GRID_JITTER * cfg.block_size;
    let mut line = |n: usize| -> Vec<f64> {
        (0..=n)
            .map(|i| i as f64 * cfg.block_size + rng.random_range(-amp..=amp))
            .collect()
    };
    let xs = line(cfg.blocks_x);
    let ys = line(cfg.blocks_y);
    RoadGrid { xs, ys }
}

fn poly(points: &[(f64, f64)], closed: bool) -> Polyline {
    Polyline::new(points.iter().map(|&p| p.into()).collect(), closed).expect("generator emits valid geometry")
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polyline {
    poly(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)], true)
}

/// Procedural Manhattan-grid ground truth in the global frame.
pub fn generate_ground_truth(cfg: &WorldConfig) -> Result<VectorMap, SimError> {
    cfg.validate()?;
    let grid = road_grid(cfg);
    let (xs, ys) = (&grid.xs, &grid.ys);
    let half = cfg.road_width / 2.0;
    let mut geoms: Vec<(Category, Polyline)> = Vec::new();

    for j in 0..cfg.blocks_y {
        for i in 0..cfg.blocks_x {
            geoms.push((
                Category::RoadBoundary,
                rect(xs[i] + half, ys[j] + half, xs[i + 1] - half, ys[j + 1] - half),
            ));
        }
    }

    // Road segments as (start, end) centreline points, axis-aligned.
    let mut segments: Vec<(Point2, Point2)> = Vec::new();
    for &y in ys {
        for w in xs.windows(2) {
            segments.push((Point2::new(w[0], y), Point2::new(w[1], y)));
        }
    }
    for &x in xs {
        for w in ys.windows(2) {
            segments.push((Point2::new(x, w[0]), Point2::new(x, w[1])));
        }
    }

    let crossing_start = half + 1.0;
    let divider_margin = crossing_start + cfg.crossing_length + 1.0;
    let lanes = cfg.lanes_per_road as f64;
    for &(a, b) in &segments {
        let len = a.dist(b);
        let dir = (b - a) * (1.0 / len);
        let normal = Point2::new(-dir.y, dir.x);
        for k in 1..cfg.lanes_per_road {
            let off = k as f64 * cfg.road_width / lanes - half;
            let p0 = a + dir * divider_margin + normal * off;
            let p1 = b - dir * divider_margin + normal * off;
            geoms.push((Category::LaneDivider, Polyline::open(vec![p0, p1]).expect("divider")));
        }
    }
    let across = (cfg.road_width - 1.0) / 2.0;
    for &(a, b) in &segments {
        let dir = (b - a) * (1.0 / a.dist(b));
        let normal = Point2::new(-dir.y, dir.x);
        for (origin, d) in [(a, dir), (b, dir * -1.0)] {
            let near = origin + d * crossing_start;
            let far = origin + d * (crossing_start + cfg.crossing_length);
            let pts = vec![near - normal * across, far - normal * across, far + normal * across, near + normal * across];
            geoms.push((Category::PedCrossing, Polyline::closed(pts).expect("crossing")));
        }
    }

    let elements = geoms
        .into_iter()
        .enumerate()
        .map(|(i, (category, geometry))| MapElement { id: ElementId(i as u64), category, geometry, score: 1.0 })
        .collect();
    Ok(VectorMap::new(Frame::Global, elements)?)
}

/// Maps an applied perturbation (mean vertex displacement, metres) to a
/// confidence: `max(floor, 1 − displacement / scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreModel {
    pub floor: f64,
    pub scale: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self { floor: 0.05, scale: 2.0 }
    }
}

impl ScoreModel {
    pub fn score(&self, displacement: f64) -> f64 {
        (1.0 - displacement / self.scale).max(self.floor).min(1.0)
    }
}

/// Scores drawn for spurious elements.
pub const SPURIOUS_SCORE_RANGE: (f64, f64) = (0.1, 0.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub point_sigma: f64,
    pub pose_sigma_xy: f64,
    pub pose_sigma_yaw_deg: f64,
    pub drop_prob: f64,
    pub spurious_rate: f64,
    #[serde(default)]
    pub score_model: ScoreModel,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            point_sigma: 0.0,
            pose_sigma_xy: 0.0,
            pose_sigma_yaw_deg: 0.0,
            drop_prob: 0.0,
            spurious_rate: 0.0,
            score_model: ScoreModel::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("point_sigma", self.point_sigma),
            ("pose_sigma_xy", self.pose_sigma_xy),
            ("pose_sigma_yaw_deg", self.pose_sigma_yaw_deg),
            ("spurious_rate", self.spurious_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(invalid(format!("drop_prob {} outside [0, 1]", self.drop_prob)));
        }
        let sm = self.score_model;
        if !(0.0..=1.0).contains(&sm.floor) || !(sm.scale > 0.0 && sm.scale.is_finite()) {
            return Err(invalid("score_model needs floor in [0, 1] and a positive scale"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    SingleScene,
    CrossScene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Seeds the perception noise. The world layout has its own seed.
    pub seed: u64,
    pub world: WorldConfig,
    pub noise: NoiseConfig,
    pub window: ClipWindow,
    pub frame_hz: f64,
    pub update_every: usize,
    pub n_frames: usize,
    /// Driving speed in m/s.
    pub speed: f64,
    pub builder: BuilderParams,
    pub eval_thresholds: Vec<f64>,
    pub mode: ScenarioMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_map: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            noise: NoiseConfig::noiseless(),
            window: ClipWindow::default(),
            frame_hz: 2.0,
            update_every: 4,
            n_frames: 60,
            speed: 5.0,
            builder: BuilderParams::default(),
            eval_thresholds: DEFAULT_THRESHOLDS.to_vec(),
            mode: ScenarioMode::SingleScene,
            initial_map: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.world.validate()?;
        self.noise.validate()?;
        self.window.validate()?;
        self.builder.validate()?;
        if self.builder.window != self.window {
            return Err(invalid("builder.window must equal the perception window"));
        }
        if self.n_frames == 0 || self.update_every == 0 {
            return Err(invalid("n_frames and update_every must be at least 1"));
        }
        if !(self.frame_hz > 0.0 && self.frame_hz.is_finite()) || !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(invalid("frame_hz and speed must be positive"));
        }
        if self.eval_thresholds.is_empty() || self.eval_thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(invalid("eval_thresholds must be a non-empty list of positive values"));
        }
        if self.mode == ScenarioMode::SingleScene && self.initial_map.is_some() {
            return Err(invalid("initial_map is only used in cross_scene mode"));
        }
        Ok(())
    }

    /// Distance covered between frames, capped at half the window length.
    pub fn frame_step(&self) -> f64 {
        (self.speed / self.frame_hz).min(self.window.length / 2.0)
    }
}

/// Boustrophedon route over the road grid: along each horizontal road in
/// turn, alternating direction, joined by vertical roads at the ends.
pub fn route(grid: &RoadGrid) -> Vec<Point2> {
    let (x_lo, x_hi) = (grid.xs[0], *grid.xs.last().expect("grid has lines"));
    let mut pts = Vec::new();
    for (j, &y) in grid.ys.iter().enumerate() {
        let (a, b) = if j % 2 == 0 { (x_lo, x_hi) } else { (x_hi, x_lo) };
        pts.push(Point2::new(a, y));
        pts.push(Point2::new(b, y));
    }
    pts
}

/// Poses at a constant step along the route. Past the end the drive turns
/// around and retraces the route, so any frame count is served.
pub fn generate_trajectory(cfg: &ScenarioConfig) -> Result<Vec<Pose>, SimError> {
    cfg.validate()?;
    let mut path = route(&road_grid(&cfg.world));
    let back: Vec<Point2> = path.iter().rev().skip(1).copied().collect();
    path.extend(back);
    let seg_len: Vec<f64> = path.windows(2).map(|w| w[0].dist(w[1])).collect();
    let total: f64 = seg_len.iter().sum();
    let step = cfg.frame_step();

    let mut poses = Vec::with_capacity(cfg.n_frames);
    for i in 0..cfg.n_frames {
        let mut s = (i as f64 * step) % total;
        let mut k = 0;
        while k + 1 < seg_len.len() && s >= seg_len[k] {
            s -= seg_len[k];
            k += 1;
        }
        let (a, b) = (path[k], path[k + 1]);
        let p = a.lerp(b, (s / seg_len[k]).min(1.0));
        let d = b - a;
        poses.push(Pose::new(p.x, p.y, d.y.atan2(d.x)));
    }
    Ok(poses)
}

/// Per-frame seed derived from the scenario seed.
pub fn frame_seed(seed: u64, frame_index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_index as u64);
    rng.next_u64()
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated finite and non-negative")
}

fn random_spurious(rng: &mut ChaCha8Rng, window: &ClipWindow, id: u64) -> Option<MapElement> {
    let category = Category::ELEMENTS[rng.random_range(0..3)];
    let (lo, hi) = window.corners();
    let start = Point2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
    let heading = rng.random_range(-PI..PI);
    let dir = Point2::new(heading.cos(), heading.sin());
    let clamp = |p: Point2| Point2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y));
    let geometry = if category == Category::PedCrossing {
        let depth = rng.random_range(2.0..6.0);
        let span = rng.random_range(4.0..10.0);
        let n = Point2::new(-dir.y, dir.x);
        let pts = [start, start + dir * depth, start + dir * depth + n * span, start + n * span];
        Polyline::new_dedup(pts.iter().map(|&p| clamp(p)).collect(), true).ok()?
    } else {
        let n_pts = rng.random_range(2..=4);
        let mut pts = vec![start];
        let mut h = heading;
        for _ in 1..n_pts {
            h += rng.random_range(-0.3..0.3);
            let step = rng.random_range(2.0..5.0);
            let last = *pts.last().expect("non-empty");
            pts.push(clamp(last + Point2::new(h.cos(), h.sin()) * step));
        }
        Polyline::new_dedup(pts, false).ok()?
    };
    let score = rng.random_range(SPURIOUS_SCORE_RANGE.0..=SPURIOUS_SCORE_RANGE.1);
    MapElement::new(ElementId(id), category, geometry, score).ok()
}

/// Noisy stand-in for an online mapping model: the ground truth seen from
/// a perturbed pose, with dropout, vertex jitter and false positives.
pub fn perceive(gt: &VectorMap, pose: &Pose, noise: &NoiseConfig, window: &ClipWindow, frame_seed: u64) -> Result<VectorMap, SimError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
    let xy = normal(noise.pose_sigma_xy);
    let yaw = normal(noise.pose_sigma_yaw_deg.to_radians());
    let seen_from = Pose::new(pose.x + xy.sample(&mut rng), pose.y + xy.sample(&mut rng), pose.yaw + yaw.sample(&mut rng));

    let clean = fragments_to_local_map(clip_map(gt, &seen_from, window)?);
    let jitter = normal(noise.point_sigma);
    let mut out = Vec::new();
    for e in clean.into_elements() {
        if rng.random::<f64>() < noise.drop_prob {
            continue;
        }
        let mut shift = 0.0;
        let pts: Vec<Point2> = e
            .geometry
            .points()
            .iter()
            .map(|&p| {
                let d = Point2::new(jitter.sample(&mut rng), jitter.sample(&mut rng));
                shift += d.norm();
                p + d
            })
            .collect();
        let mean_shift = shift / pts.len() as f64;
        let Ok(geometry) = Polyline::new_dedup(pts, e.geometry.is_closed()) else {
            continue;
        };
        out.push(MapElement {
            id: ElementId(out.len() as u64),
            category: e.category,
            geometry,
            score: noise.score_model.score(mean_shift),
        });
    }
    if noise.spurious_rate > 0.0 {
        let count = Poisson::new(noise.spurious_rate).expect("rate validated").sample(&mut rng) as u64;
        for _ in 0..count {
            if let Some(e) = random_spurious(&mut rng, window, out.len() as u64) {
                out.push(e);
            }
        }
    }
    Ok(VectorMap::new(Frame::Ego, out)?)
}

/// Ground-truth local map: noiseless clip at the true pose.
pub fn local_ground_truth(gt: &VectorMap, pose: &Pose, window: &ClipWindow) -> Result<VectorMap, SimError> {
    Ok(fragments_to_local_map(clip_map(gt, pose, window)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub pose: Pose,
    pub pred: VectorMap,
    pub gt: VectorMap,
    /// Whether this frame's prediction was merged into the global map.
    pub merged: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub gt: VectorMap,
    pub frames: Vec<FrameRecord>,
    pub state: GlobalMapState,
    pub traced: TracedRegion,
    /// Ground truth restricted to the traced region (the GAP reference).
    pub gt_traced: VectorMap,
    /// The map scored for GAP.
    pub evaluated: VectorMap,
    pub report: EvalReport,
}

/// Runs a scenario, loading `initial_map` from disk in cross-scene mode.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, SimError> {
    let initial = match (&cfg.mode, &cfg.initial_map) {
        (ScenarioMode::CrossScene, Some(path)) => Some(
            crate::io::load_map(path)
                .map_err(|e| SimError::InitialMap { path: path.clone(), message: e.to_string() })?,
        ),
        _ => None,
    };
    run_scenario_with(cfg, initial)
}

/// Runs a scenario, starting the global map from `initial` when given.
pub fn run_scenario_with(cfg: &ScenarioConfig, initial: Option<VectorMap>) -> Result<ScenarioOutcome, SimError> {
    cfg.validate()?;
    let gt = generate_ground_truth(&cfg.world)?;
    let poses = generate_trajectory(cfg)?;
    let mut state = match initial {
        Some(map) => GlobalMapState::from_map(map)?,
        None => GlobalMapState::new(),
    };
    let mut traced = TracedRegion::new();
    let mut frames = Vec::with_capacity(poses.len());
    for (i, pose) in poses.into_iter().enumerate() {
        let pred = perceive(&gt, &pose, &cfg.noise, &cfg.window, frame_seed(cfg.seed, i))?;
        let local_gt = local_ground_truth(&gt, &pose, &cfg.window)?;
        let merged = i % cfg.update_every == 0;
        if merged {
            state.merge_step(&pred, &pose, &cfg.builder)?;
            traced.update(pose, cfg.window);
        }
        frames.push(FrameRecord { pose, pred, gt: local_gt, merged });
    }

    let preds: Vec<VectorMap> = frames.iter().map(|f| f.pred.clone()).collect();
    let gts: Vec<VectorMap> = frames.iter().map(|f| f.gt.clone()).collect();
    let ap = ap_stream(&preds, &gts, &cfg.eval_thresholds)?;
    let gt_traced = traced.clip_map(&gt)?;
    let evaluated = match cfg.mode {
        ScenarioMode::SingleScene => state.map().clone(),
        ScenarioMode::CrossScene => traced.clip_map(state.map())?,
    };
    let gap = gap_map(&evaluated, &gt_traced, &cfg.eval_thresholds)?;
    let report = EvalReport {
        ap: Some(ap),
        gap: Some(gap),
        metadata: ReportMetadata::new(&cfg.eval_thresholds, Some(cfg.builder.clone())),
    };
    Ok(ScenarioOutcome { gt, frames, state, traced, gt_traced, evaluated, report })
}
