//! Vectorized map data model and the clip operation that cuts a global map
//! down to an ego-centred window.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clip_pieces, clip_segment_to_box, Direction, GeometryError, Point2, Polyline};
pub use crate::geometry::Pose;

/// Clipped pieces shorter than this are discarded.
pub const MIN_FRAGMENT_LENGTH: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("expected a map in the {expected} frame, got {found}")]
    WrongFrame { expected: Frame, found: Frame },
    #[error("duplicate element id {0}")]
    DuplicateId(ElementId),
    #[error("element {id}: score {score} outside [0, 1]")]
    InvalidScore { id: ElementId, score: f64 },
    #[error("element {0}: traced_region is a raster channel, not an element category")]
    NotAnElementCategory(ElementId),
    #[error("category mismatch: {0} vs {1}")]
    CategoryMismatch(Category, Category),
    #[error("clip window must have positive length and width, got {length} x {width}")]
    InvalidWindow { length: f64, width: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    RoadBoundary,
    LaneDivider,
    PedCrossing,
    /// Raster-only channel for the area covered by past observations.
    TracedRegion,
}

impl Category {
    /// The categories a [`MapElement`] may carry.
    pub const ELEMENTS: [Category; 3] =
        [Category::RoadBoundary, Category::LaneDivider, Category::PedCrossing];

    pub fn is_element(self) -> bool {
        self != Category::TracedRegion
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::RoadBoundary => "road_boundary",
            Category::LaneDivider => "lane_divider",
            Category::PedCrossing => "ped_crossing",
            Category::TracedRegion => "traced_region",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Category::RoadBoundary => "road",
            Category::LaneDivider => "lane",
            Category::PedCrossing => "ped",
            Category::TracedRegion => "traced",
        }
    }

    pub fn from_name(name: &str) -> Option<Category> {
        [
            Category::RoadBoundary,
            Category::LaneDivider,
            Category::PedCrossing,
            Category::TracedRegion,
        ]
        .into_iter()
        .find(|c| c.name() == name)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per element category.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerCategory<T> {
    pub road_boundary: T,
    pub lane_divider: T,
    pub ped_crossing: T,
}

impl<T: Copy> PerCategory<T> {
    pub fn new(road_boundary: T, lane_divider: T, ped_crossing: T) -> Self {
        Self { road_boundary, lane_divider, ped_crossing }
    }

    pub fn splat(value: T) -> Self {
        Self::new(value, value, value)
    }

    /// Panics for [`Category::TracedRegion`].
    pub fn get(&self, category: Category) -> T {
        match category {
            Category::RoadBoundary => self.road_boundary,
            Category::LaneDivider => self.lane_divider,
            Category::PedCrossing => self.ped_crossing,
            Category::TracedRegion => panic!("traced_region has no per-category value"),
        }
    }

    pub fn values(&self) -> [T; 3] {
        [self.road_boundary, self.lane_divider, self.ped_crossing]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub u64);

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Ego,
    Global,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frame::Ego => "ego",
            Frame::Global => "global",
        })
    }
}

/// One categorized, scored polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct MapElement {
    pub id: ElementId,
    pub category: Category,
    pub geometry: Polyline,
    pub score: f64,
}

impl MapElement {
    pub fn new(
        id: ElementId,
        category: Category,
        geometry: Polyline,
        score: f64,
    ) -> Result<Self, MapError> {
        let e = Self { id, category, geometry, score };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if !self.category.is_element() {
            return Err(MapError::NotAnElementCategory(self.id));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(MapError::InvalidScore { id: self.id, score: self.score });
        }
        Ok(())
    }

    pub fn transformed(&self, pose: &Pose, direction: Direction) -> MapElement {
        MapElement { geometry: self.geometry.transform(pose, direction), ..self.clone() }
    }
}

/// A collection of map elements sharing one coordinate frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMap {
    frame: Frame,
    elements: Vec<MapElement>,
}

impl VectorMap {
    pub fn new(frame: Frame, elements: Vec<MapElement>) -> Result<Self, MapError> {
        let mut seen = HashSet::with_capacity(elements.len());
        for e in &elements {
            e.validate()?;
            if !seen.insert(e.id) {
                return Err(MapError::DuplicateId(e.id));
            }
        }
        Ok(Self { frame, elements })
    }

    pub fn empty(frame: Frame) -> Self {
        Self { frame, elements: Vec::new() }
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn elements(&self) -> &[MapElement] {
        &self.elements
    }

    pub fn into_elements(self) -> Vec<MapElement> {
        self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn of_category(&self, category: Category) -> impl Iterator<Item = &MapElement> {
        self.elements.iter().filter(move |e| e.category == category)
    }

    pub fn get(&self, id: ElementId) -> Option<&MapElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    /// One past the largest id in use.
    pub fn next_free_id(&self) -> u64 {
        self.elements.iter().map(|e| e.id.0 + 1).max().unwrap_or(0)
    }

    pub fn expect_frame(&self, expected: Frame) -> Result<(), MapError> {
        if self.frame != expected {
            return Err(MapError::WrongFrame { expected, found: self.frame });
        }
        Ok(())
    }
}

/// Perception window: `length` along the heading, `width` across it, both
/// centred on the ego position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipWindow {
    pub length: f64,
    pub width: f64,
}

impl ClipWindow {
    pub fn new(length: f64, width: f64) -> Result<Self, MapError> {
        let w = Self { length, width };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if !(self.length > 0.0 && self.width > 0.0) || !self.length.is_finite() || !self.width.is_finite()
        {
            return Err(MapError::InvalidWindow { length: self.length, width: self.width });
        }
        Ok(())
    }

    /// Lower-left and upper-right corners in the ego frame.
    pub fn corners(&self) -> (Point2, Point2) {
        (
            Point2::new(-self.length / 2.0, -self.width / 2.0),
            Point2::new(self.length / 2.0, self.width / 2.0),
        )
    }

    pub fn contains(&self, ego_point: Point2, tolerance: f64) -> bool {
        ego_point.x.abs() <= self.length / 2.0 + tolerance
            && ego_point.y.abs() <= self.width / 2.0 + tolerance
    }
}

impl Default for ClipWindow {
    fn default() -> Self {
        Self { length: 60.0, width: 30.0 }
    }
}

/// A clipped piece of a global element, expressed in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFragment {
    pub element: MapElement,
    pub parent_id: ElementId,
    /// Arc length on the parent where this fragment begins.
    pub arc_offset: f64,
}

/// Cuts every element of a global map to the ego window at `pose`.
pub fn clip_map(
    map: &VectorMap,
    pose: &Pose,
    window: &ClipWindow,
) -> Result<Vec<ClipFragment>, MapError> {
    map.expect_frame(Frame::Global)?;
    window.validate()?;
    let (lo, hi) = window.corners();
    let mut fragments = Vec::new();
    for parent in map.elements() {
        let ego = parent.geometry.transform(pose, Direction::GlobalToEgo);
        let pieces = clip_pieces(
            &ego,
            |a, b| clip_segment_to_box(a, b, lo, hi).into_iter().collect(),
            MIN_FRAGMENT_LENGTH,
        );
        for (k, piece) in pieces.into_iter().enumerate() {
            fragments.push(ClipFragment {
                element: MapElement {
                    id: ElementId(k as u64),
                    category: parent.category,
                    geometry: piece.polyline,
                    score: parent.score,
                },
                parent_id: parent.id,
                arc_offset: piece.start_arc,
            });
        }
    }
    Ok(fragments)
}

/// Drops parentage, numbering elements 0.. in fragment order.
pub fn fragments_to_local_map(fragments: Vec<ClipFragment>) -> VectorMap {
    let elements = fragments
        .into_iter()
        .enumerate()
        .map(|(i, f)| MapElement { id: ElementId(i as u64), ..f.element })
        .collect();
    VectorMap { frame: Frame::Ego, elements }
}

pub fn map_to_global(map: &VectorMap, pose: &Pose) -> Result<VectorMap, MapError> {
    map.expect_frame(Frame::Ego)?;
    Ok(VectorMap {
        frame: Frame::Global,
        elements: map
            .elements()
            .iter()
            .map(|e| e.transformed(pose, Direction::EgoToGlobal))
            .collect(),
    })
}

pub fn map_to_ego(map: &VectorMap, pose: &Pose) -> Result<VectorMap, MapError> {
    map.expect_frame(Frame::Global)?;
    Ok(VectorMap {
        frame: Frame::Ego,
        elements: map
            .elements()
            .iter()
            .map(|e| e.transformed(pose, Direction::GlobalToEgo))
            .collect(),
    })
}
