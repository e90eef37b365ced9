//! Global map builder: matches each new local map against a clip of the
//! global map, splices matched elements in place, appends the rest and
//! removes duplicates with Map NMS.

pub mod assignment;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{buffered_iou, chamfer_distance, Direction, GeometryError, Polyline};
use crate::map_model::{
    clip_map, Category, ClipFragment, ClipWindow, ElementId, Frame, MapElement, MapError,
    PerCategory, Pose, VectorMap,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuilderError {
    #[error("invalid builder parameters: {0}")]
    InvalidParams(String),
    #[error("local element {0} not found")]
    UnknownLocal(ElementId),
    #[error("global element {0} not found")]
    UnknownParent(ElementId),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuilderParams {
    /// Largest Chamfer distance (m) at which a match is accepted.
    pub match_distance: PerCategory<f64>,
    /// Buffer radius (m) for the buffered IoU of Map NMS.
    pub nms_buffer: PerCategory<f64>,
    pub nms_iou_threshold: f64,
    pub window: ClipWindow,
    /// Splices whose projected span is shorter than this are skipped.
    pub min_splice_span: f64,
    #[serde(default = "default_true")]
    pub nms_enabled: bool,
}

impl Default for BuilderParams {
    fn default() -> Self {
        Self::with_distances(2.0, 1.0, 0.5)
    }
}

impl BuilderParams {
    /// Matching distances per category, with NMS buffers set equal to them.
    pub fn with_distances(road: f64, lane: f64, ped: f64) -> Self {
        let d = PerCategory::new(road, lane, ped);
        Self {
            match_distance: d,
            nms_buffer: d,
            nms_iou_threshold: 0.5,
            window: ClipWindow::default(),
            min_splice_span: 0.1,
            nms_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), BuilderError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.match_distance.values().into_iter().all(positive) {
            return Err(BuilderError::InvalidParams("match distances must be positive".into()));
        }
        if !self.nms_buffer.values().into_iter().all(positive) {
            return Err(BuilderError::InvalidParams("NMS buffers must be positive".into()));
        }
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold <= 1.0) {
            return Err(BuilderError::InvalidParams(format!(
                "nms_iou_threshold {} outside (0, 1]",
                self.nms_iou_threshold
            )));
        }
        if !positive(self.min_splice_span) {
            return Err(BuilderError::InvalidParams("min_splice_span must be positive".into()));
        }
        self.window.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub parent_id: ElementId,
    pub local_id: ElementId,
    /// Index into the fragment list passed to [`match_maps`].
    pub fragment_index: usize,
    pub arc_offset: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// Ordered by fragment index.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_global: Vec<ElementId>,
    pub unmatched_local: Vec<ElementId>,
}

impl MatchResult {
    /// Sum of pair costs in fragment order.
    pub fn total_cost(&self) -> f64 {
        self.pairs.iter().map(|p| p.cost).sum()
    }
}

/// Per-category minimum-cost Chamfer assignment between clipped global
/// fragments and local elements (both in the ego frame).
pub fn match_maps(
    fragments: &[ClipFragment],
    local: &VectorMap,
    params: &BuilderParams,
) -> Result<MatchResult, BuilderError> {
    local.expect_frame(Frame::Ego)?;
    let mut pairs = Vec::new();
    for category in Category::ELEMENTS {
        let frags: Vec<usize> = (0..fragments.len())
            .filter(|&i| fragments[i].element.category == category)
            .collect();
        let locals: Vec<&MapElement> = local.of_category(category).collect();
        if frags.is_empty() || locals.is_empty() {
            continue;
        }
        let cost: Vec<Vec<f64>> = frags
            .iter()
            .map(|&i| {
                locals
                    .iter()
                    .map(|l| chamfer_distance(&fragments[i].element.geometry, &l.geometry))
                    .collect()
            })
            .collect();
        let limit = params.match_distance.get(category);
        // One splice per parent: keep its cheapest pair.
        let mut best: HashMap<ElementId, MatchedPair> = HashMap::new();
        for (row, col) in assignment::solve(&cost).into_iter().enumerate() {
            let Some(col) = col else { continue };
            let c = cost[row][col];
            if c > limit {
                continue;
            }
            let frag = &fragments[frags[row]];
            let pair = MatchedPair {
                parent_id: frag.parent_id,
                local_id: locals[col].id,
                fragment_index: frags[row],
                arc_offset: frag.arc_offset,
                cost: c,
            };
            match best.get(&frag.parent_id) {
                Some(existing) if existing.cost <= c => {}
                _ => {
                    best.insert(frag.parent_id, pair);
                }
            }
        }
        pairs.extend(best.into_values());
    }
    pairs.sort_by_key(|p| p.fragment_index);

    let matched_locals: HashSet<ElementId> = pairs.iter().map(|p| p.local_id).collect();
    let matched_parents: HashSet<ElementId> = pairs.iter().map(|p| p.parent_id).collect();
    let unmatched_local = local
        .elements()
        .iter()
        .map(|e| e.id)
        .filter(|id| !matched_locals.contains(id))
        .collect();
    let mut unmatched_global = Vec::new();
    for f in fragments {
        if !matched_parents.contains(&f.parent_id) && !unmatched_global.contains(&f.parent_id) {
            unmatched_global.push(f.parent_id);
        }
    }
    Ok(MatchResult { pairs, unmatched_global, unmatched_local })
}

/// Splices `local` (already in the global frame) into `parent`: the stretch
/// of the parent between the projections of the local endpoints is replaced
/// by the whole local polyline.
pub fn inplace_replace(
    parent: &MapElement,
    fragment_offset: f64,
    local: &MapElement,
    params: &BuilderParams,
) -> Result<MapElement, BuilderError> {
    if parent.category != local.category {
        return Err(MapError::CategoryMismatch(parent.category, local.category).into());
    }
    let replaced = |geometry: Polyline| MapElement {
        id: parent.id,
        category: parent.category,
        geometry,
        score: local.score,
    };
    // A complete ring is a full observation of the element.
    if local.geometry.is_closed() {
        return Ok(replaced(local.geometry.clone()));
    }
    let spliced = if parent.geometry.is_closed() {
        splice_ring(&parent.geometry, fragment_offset, &local.geometry, params.min_splice_span)
    } else {
        splice_open(&parent.geometry, &local.geometry, params.min_splice_span)
    };
    Ok(match spliced {
        Some(g) => replaced(g),
        None if local.score > parent.score => replaced(local.geometry.clone()),
        None => parent.clone(),
    })
}

fn splice_open(parent: &Polyline, local: &Polyline, min_span: f64) -> Option<Polyline> {
    let mut s1 = parent.project(local.first()).arc_length;
    let mut s2 = parent.project(local.last()).arc_length;
    let mut inserted = local.points().to_vec();
    let arcs = parent.vertex_arcs();
    if s1 > s2 {
        let mid = parent.project(local.point_at(local.length() / 2.0)).arc_length;
        if mid < s2 || mid > s1 {
            // The local runs off the parent's end and back onto its start:
            // together they close a loop.
            let mut ring: Vec<_> = parent
                .points()
                .iter()
                .zip(&arcs)
                .filter(|(_, &a)| a > s2 && a < s1)
                .map(|(p, _)| *p)
                .collect();
            ring.extend(inserted);
            return Polyline::new_dedup(ring, true).ok();
        }
        inserted.reverse();
        std::mem::swap(&mut s1, &mut s2);
    }
    if s2 - s1 < min_span {
        return None;
    }
    let pts = parent.points();
    let mut out: Vec<_> = pts.iter().zip(&arcs).filter(|(_, &a)| a < s1).map(|(p, _)| *p).collect();
    out.extend(inserted);
    out.extend(pts.iter().zip(&arcs).filter(|(_, &a)| a > s2).map(|(p, _)| *p));
    Polyline::new_dedup(out, false).ok()
}

/// Opens the ring at the point farthest from `local`, splices, and closes it
/// again.
fn splice_ring(ring: &Polyline, fragment_offset: f64, local: &Polyline, min_span: f64) -> Option<Polyline> {
    const SAMPLES: usize = 64;
    let total = ring.length();
    let arcs = ring.vertex_arcs();
    let candidates = arcs
        .iter()
        .copied()
        .chain((0..SAMPLES).map(|k| total * k as f64 / SAMPLES as f64));
    let cyclic_gap = |a: f64| {
        let d = (a - fragment_offset).rem_euclid(total);
        d.min(total - d)
    };
    let mut cut = 0.0;
    let mut cut_dist = f64::NEG_INFINITY;
    for arc in candidates {
        let d = local.distance_to(ring.point_at(arc));
        if d > cut_dist || (d == cut_dist && cyclic_gap(arc) > cyclic_gap(cut)) {
            cut = arc;
            cut_dist = d;
        }
    }
    if cut_dist <= 1e-9 {
        return Some(local.clone());
    }
    let cut_point = ring.point_at(cut);
    let pts = ring.points();
    let mut opened = vec![cut_point];
    opened.extend(pts.iter().zip(&arcs).filter(|(_, &a)| a > cut).map(|(p, _)| *p));
    opened.extend(pts.iter().zip(&arcs).filter(|(_, &a)| a <= cut).map(|(p, _)| *p));
    opened.push(cut_point);
    let opened = Polyline::new_dedup(opened, false).ok()?;
    let spliced = splice_open(&opened, local, min_span)?;
    Polyline::new_dedup(spliced.into_points(), true).ok()
}

/// Greedy score-ordered suppression within each category. Equal scores are
/// ordered longest first, so a partial observation cannot suppress the whole
/// element, then oldest (smallest id) first. Survivors keep their input order.
pub fn map_nms(elements: &[MapElement], params: &BuilderParams) -> Result<Vec<MapElement>, BuilderError> {
    if !params.nms_enabled {
        return Ok(elements.to_vec());
    }
    let lengths: Vec<f64> = elements.iter().map(|e| e.geometry.length()).collect();
    let mut order: Vec<usize> = (0..elements.len()).collect();
    order.sort_by(|&i, &j| {
        elements[j]
            .score
            .total_cmp(&elements[i].score)
            .then(lengths[j].total_cmp(&lengths[i]))
            .then(elements[i].id.cmp(&elements[j].id))
    });
    let mut keep = vec![false; elements.len()];
    let mut kept_by_category: HashMap<Category, Vec<usize>> = HashMap::new();
    for i in order {
        let e = &elements[i];
        let radius = params.nms_buffer.get(e.category);
        let kept = kept_by_category.entry(e.category).or_default();
        let mut suppressed = false;
        for &k in kept.iter() {
            if buffered_iou(&e.geometry, &elements[k].geometry, radius)? >= params.nms_iou_threshold {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(i);
            keep[i] = true;
        }
    }
    Ok(elements
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MergeSummary {
    pub matched: usize,
    pub appended: usize,
    pub suppressed: usize,
}

/// The global map under construction. One writer at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMapState {
    map: VectorMap,
    next_id: u64,
}

impl Default for GlobalMapState {
    fn default() -> Self {
        Self::new()
    }
}

impl GlobalMapState {
    pub fn new() -> Self {
        Self { map: VectorMap::empty(Frame::Global), next_id: 0 }
    }

    /// Continues from an existing global map (e.g. one inherited from an
    /// earlier drive).
    pub fn from_map(map: VectorMap) -> Result<Self, BuilderError> {
        map.expect_frame(Frame::Global)?;
        let next_id = map.next_free_id();
        Ok(Self { map, next_id })
    }

    pub fn map(&self) -> &VectorMap {
        &self.map
    }

    pub fn into_map(self) -> VectorMap {
        self.map
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Clip, match, splice, append and suppress, for one local prediction
    /// taken at `pose`.
    pub fn merge_step(
        &mut self,
        local: &VectorMap,
        pose: &Pose,
        params: &BuilderParams,
    ) -> Result<MergeSummary, BuilderError> {
        params.validate()?;
        local.expect_frame(Frame::Ego)?;
        if local.is_empty() {
            return Ok(MergeSummary::default());
        }
        let fragments = clip_map(&self.map, pose, &params.window)?;
        let matches = match_maps(&fragments, local, params)?;

        let mut elements = self.map.elements().to_vec();
        let index: HashMap<ElementId, usize> =
            elements.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
        let mut touched = BTreeSet::new();
        for pair in &matches.pairs {
            let local_elem = local
                .get(pair.local_id)
                .ok_or(BuilderError::UnknownLocal(pair.local_id))?
                .transformed(pose, Direction::EgoToGlobal);
            let &slot = index.get(&pair.parent_id).ok_or(BuilderError::UnknownParent(pair.parent_id))?;
            elements[slot] = inplace_replace(&elements[slot], pair.arc_offset, &local_elem, params)?;
            touched.insert(local_elem.category);
        }
        for &id in &matches.unmatched_local {
            let mut e = local
                .get(id)
                .ok_or(BuilderError::UnknownLocal(id))?
                .transformed(pose, Direction::EgoToGlobal);
            e.id = ElementId(self.next_id);
            self.next_id += 1;
            touched.insert(e.category);
            elements.push(e);
        }

        let before = elements.len();
        let candidates: Vec<MapElement> =
            elements.iter().filter(|e| touched.contains(&e.category)).cloned().collect();
        let survivors: HashSet<ElementId> = map_nms(&candidates, params)?.into_iter().map(|e| e.id).collect();
        elements.retain(|e| !touched.contains(&e.category) || survivors.contains(&e.id));

        let summary = MergeSummary {
            matched: matches.pairs.len(),
            appended: matches.unmatched_local.len(),
            suppressed: before - elements.len(),
        };
        self.map = VectorMap::new(Frame::Global, elements)?;
        Ok(summary)
    }
}

/// Functional form of [`GlobalMapState::merge_step`].
pub fn merge_step(
    state: &GlobalMapState,
    local: &VectorMap,
    pose: &Pose,
    params: &BuilderParams,
) -> Result<GlobalMapState, BuilderError> {
    let mut next = state.clone();
    next.merge_step(local, pose, params)?;
    Ok(next)
}
