//! Soft BEV rasterization of map elements, plus the traced-region channel.

use thiserror::Error;

use crate::geometry::{clip_pieces, clip_segment_to_box, Point2};
use crate::map_model::{
    clip_map, Category, ClipWindow, Frame, MapElement, MapError, Pose, VectorMap, MIN_FRAGMENT_LENGTH,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RasterError {
    #[error("smoothness tau must be positive, got {0}")]
    InvalidTau(f64),
    #[error("resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error("window {length} x {width} is not a whole number of {resolution} m cells")]
    NotDivisible { length: f64, width: f64, resolution: f64 },
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Grid over an ego window. Row 0 is the left edge (+y), column 0 the rear
/// edge (−x); intensities are sampled at cell centres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub window: ClipWindow,
    pub resolution: f64,
    rows: usize,
    cols: usize,
}

impl GridSpec {
    pub fn new(window: ClipWindow, resolution: f64) -> Result<Self, RasterError> {
        window.validate()?;
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(RasterError::InvalidResolution(resolution));
        }
        let whole = |extent: f64| {
            let n = (extent / resolution).round();
            (n >= 1.0 && (n * resolution - extent).abs() <= 1e-9).then_some(n as usize)
        };
        match (whole(window.width), whole(window.length)) {
            (Some(rows), Some(cols)) => Ok(Self { window, resolution, rows, cols }),
            _ => Err(RasterError::NotDivisible {
                length: window.length,
                width: window.width,
                resolution,
            }),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            -self.window.length / 2.0 + (col as f64 + 0.5) * self.resolution,
            self.window.width / 2.0 - (row as f64 + 0.5) * self.resolution,
        )
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::new(ClipWindow::default(), 0.3).expect("default grid is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevMask {
    pub category: Category,
    pub rows: usize,
    pub cols: usize,
    /// Row-major intensities in [0, 1].
    pub values: Vec<f64>,
}

impl BevMask {
    pub fn zeros(category: Category, spec: &GridSpec) -> Self {
        Self {
            category,
            rows: spec.rows(),
            cols: spec.cols(),
            values: vec![0.0; spec.rows() * spec.cols()],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

/// Intensity of one cell for one element: `exp(-D / tau)`.
pub fn soft_intensity(distance: f64, tau: f64) -> f64 {
    (-distance / tau).exp()
}

fn rasterize_category(elements: &[&MapElement], category: Category, spec: &GridSpec, tau: f64) -> BevMask {
    let mut mask = BevMask::zeros(category, spec);
    if elements.is_empty() {
        return mask;
    }
    for row in 0..spec.rows() {
        for col in 0..spec.cols() {
            let c = spec.cell_center(row, col);
            let d = elements
                .iter()
                .map(|e| e.geometry.distance_to(c))
                .fold(f64::INFINITY, f64::min);
            mask.values[row * spec.cols() + col] = soft_intensity(d, tau);
        }
    }
    mask
}

/// One soft mask per category present among `elements` (ego frame), in
/// category order.
pub fn rasterize_soft(elements: &[MapElement], spec: &GridSpec, tau: f64) -> Result<Vec<BevMask>, RasterError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(RasterError::InvalidTau(tau));
    }
    Ok(Category::ELEMENTS
        .into_iter()
        .filter_map(|category| {
            let of_cat: Vec<&MapElement> = elements.iter().filter(|e| e.category == category).collect();
            (!of_cat.is_empty()).then(|| rasterize_category(&of_cat, category, spec, tau))
        })
        .collect())
}

/// A single observation rectangle in the global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub pose: Pose,
    pub window: ClipWindow,
}

impl Footprint {
    pub fn contains(&self, global: Point2) -> bool {
        self.window.contains(self.pose.global_to_ego(global), 0.0)
    }
}

/// Union of every window the map has been updated from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TracedRegion {
    footprints: Vec<Footprint>,
}

impl TracedRegion {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_footprints(footprints: Vec<Footprint>) -> Self {
        Self { footprints }
    }

    pub fn footprints(&self) -> &[Footprint] {
        &self.footprints
    }

    pub fn is_empty(&self) -> bool {
        self.footprints.is_empty()
    }

    pub fn update(&mut self, pose: Pose, window: ClipWindow) {
        self.footprints.push(Footprint { pose, window });
    }

    pub fn contains(&self, global: Point2) -> bool {
        self.footprints.iter().any(|f| f.contains(global))
    }

    /// Parts of every element inside the region, one element per connected
    /// piece. Ids are renumbered from 0.
    pub fn clip_map(&self, map: &VectorMap) -> Result<VectorMap, MapError> {
        map.expect_frame(Frame::Global)?;
        let mut out = Vec::new();
        for e in map.elements() {
            let pieces = clip_pieces(&e.geometry, |a, b| self.segment_intervals(a, b), MIN_FRAGMENT_LENGTH);
            for piece in pieces {
                out.push(MapElement {
                    id: crate::map_model::ElementId(out.len() as u64),
                    category: e.category,
                    geometry: piece.polyline,
                    score: e.score,
                });
            }
        }
        VectorMap::new(Frame::Global, out)
    }

    fn segment_intervals(&self, a: Point2, b: Point2) -> Vec<(f64, f64)> {
        let mut ivs: Vec<(f64, f64)> = self
            .footprints
            .iter()
            .filter_map(|f| {
                let (lo, hi) = f.window.corners();
                clip_segment_to_box(f.pose.global_to_ego(a), f.pose.global_to_ego(b), lo, hi)
            })
            .collect();
        ivs.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (t0, t1) in ivs {
            match merged.last_mut() {
                Some(last) if t0 <= last.1 + 1e-12 => last.1 = last.1.max(t1),
                _ => merged.push((t0, t1)),
            }
        }
        merged
    }
}

pub fn update_traced_region(region: &TracedRegion, pose: Pose, window: ClipWindow) -> TracedRegion {
    let mut next = region.clone();
    next.update(pose, window);
    next
}

/// 1 where the cell centre (mapped to global via `ego_pose`) lies in the
/// traced region, else 0.
pub fn traced_mask(region: &TracedRegion, ego_pose: &Pose, spec: &GridSpec) -> BevMask {
    let mut mask = BevMask::zeros(Category::TracedRegion, spec);
    if region.is_empty() {
        return mask;
    }
    for row in 0..spec.rows() {
        for col in 0..spec.cols() {
            let g = ego_pose.ego_to_global(spec.cell_center(row, col));
            if region.contains(g) {
                mask.values[row * spec.cols() + col] = 1.0;
            }
        }
    }
    mask
}

/// Clips the global map at `pose` and renders all three element channels
/// (absent categories are all-zero) followed by the traced-region channel.
pub fn clip_and_rasterize(
    global: &VectorMap,
    region: &TracedRegion,
    pose: &Pose,
    spec: &GridSpec,
    tau: f64,
) -> Result<Vec<BevMask>, RasterError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(RasterError::InvalidTau(tau));
    }
    let fragments = clip_map(global, pose, &spec.window)?;
    let elements: Vec<MapElement> = fragments.into_iter().map(|f| f.element).collect();
    let mut masks: Vec<BevMask> = Category::ELEMENTS
        .into_iter()
        .map(|category| {
            let of_cat: Vec<&MapElement> = elements.iter().filter(|e| e.category == category).collect();
            rasterize_category(&of_cat, category, spec, tau)
        })
        .collect();
    masks.push(traced_mask(region, pose, spec));
    Ok(masks)
}
