//! Incremental construction of a vectorized global HD map from a stream of
//! local (ego-frame) vectorized maps, with evaluation and rasterization.

pub mod builder;
pub mod geometry;
pub mod io;
pub mod map_model;
pub mod metrics;
pub mod rasterizer;
pub mod simulator;
pub mod svg;

pub use builder::{merge_step, BuilderError, BuilderParams, GlobalMapState, MergeSummary};
pub use geometry::{chamfer_distance, Point2, Polyline, Pose};
pub use map_model::{clip_map, Category, ClipWindow, ElementId, Frame, MapElement, VectorMap};
pub use metrics::{ap_stream, gap_map, EvalReport};
pub use rasterizer::{clip_and_rasterize, rasterize_soft, BevMask, GridSpec, TracedRegion};
pub use simulator::{run_scenario, ScenarioConfig};
