//! Chamfer-based average precision over frame streams (AP) and over a single
//! global map (GAP).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::BuilderParams;
use crate::geometry::{chamfer_distance, CHAMFER_SAMPLES};
use crate::map_model::{Category, Frame, MapError, VectorMap};

/// Default Chamfer thresholds (m) for AP and GAP.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 1.0, 1.5];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("prediction frame {pred} does not match ground-truth frame {gt}")]
    FrameMismatch { pred: Frame, gt: Frame },
    #[error("{preds} prediction frames but {gts} ground-truth frames")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("at least one positive threshold is required")]
    NoThresholds,
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub score: f64,
    pub is_tp: bool,
    pub category: Category,
    pub frame_index: usize,
}

/// Detections of one frame at one threshold, plus ground-truth counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    pub detections: Vec<Detection>,
    /// Ground-truth element count per category, in [`Category::ELEMENTS`] order.
    pub gt_counts: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub gt_count: usize,
}

fn category_index(c: Category) -> usize {
    Category::ELEMENTS.iter().position(|&x| x == c).expect("element category")
}

/// Chamfer cost matrices of one frame, reused across thresholds.
struct FrameCosts {
    /// Per category: prediction order (score-descending) and the
    /// prediction × ground-truth distances in that order.
    categories: Vec<(Category, Vec<f64>, Vec<Vec<f64>>)>,
    gt_counts: [usize; 3],
}

impl FrameCosts {
    fn new(pred: &VectorMap, gt: &VectorMap) -> Result<Self, MetricsError> {
        if pred.frame() != gt.frame() {
            return Err(MetricsError::FrameMismatch { pred: pred.frame(), gt: gt.frame() });
        }
        let mut categories = Vec::new();
        let mut gt_counts = [0; 3];
        for (ci, category) in Category::ELEMENTS.into_iter().enumerate() {
            let gts: Vec<_> = gt.of_category(category).collect();
            gt_counts[ci] = gts.len();
            let mut preds: Vec<_> = pred.of_category(category).collect();
            preds.sort_by(|a, b| b.score.total_cmp(&a.score));
            let scores = preds.iter().map(|p| p.score).collect();
            let dists = preds
                .iter()
                .map(|p| gts.iter().map(|g| chamfer_distance(&p.geometry, &g.geometry)).collect())
                .collect();
            categories.push((category, scores, dists));
        }
        Ok(Self { categories, gt_counts })
    }

    fn detections(&self, threshold: f64, frame_index: usize) -> FrameMatch {
        let mut detections = Vec::new();
        for (category, scores, dists) in &self.categories {
            let n_gt = self.gt_counts[category_index(*category)];
            let mut claimed = vec![false; n_gt];
            for (score, row) in scores.iter().zip(dists) {
                let best = (0..n_gt)
                    .filter(|&g| !claimed[g])
                    .min_by(|&a, &b| row[a].total_cmp(&row[b]));
                let is_tp = match best {
                    Some(g) if row[g] < threshold => {
                        claimed[g] = true;
                        true
                    }
                    _ => false,
                };
                detections.push(Detection { score: *score, is_tp, category: *category, frame_index });
            }
        }
        FrameMatch { detections, gt_counts: self.gt_counts }
    }
}

/// Greedy score-ordered one-to-one matching: each prediction claims the
/// nearest unclaimed ground truth if its Chamfer distance is below
/// `threshold`.
pub fn match_frame(pred: &VectorMap, gt: &VectorMap, threshold: f64) -> Result<FrameMatch, MetricsError> {
    Ok(FrameCosts::new(pred, gt)?.detections(threshold, 0))
}

/// Cumulative precision/recall over detections ranked by score (ties: true
/// positives first, then by frame index).
pub fn pr_curve(detections: &[Detection], gt_count: usize) -> PrCurve {
    let mut ranked = detections.to_vec();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.is_tp.cmp(&a.is_tp))
            .then(a.frame_index.cmp(&b.frame_index))
    });
    let mut tp = 0usize;
    let points = ranked
        .iter()
        .enumerate()
        .map(|(k, d)| {
            if d.is_tp {
                tp += 1;
            }
            PrPoint {
                recall: if gt_count == 0 { 0.0 } else { tp as f64 / gt_count as f64 },
                precision: tp as f64 / (k + 1) as f64,
            }
        })
        .collect();
    PrCurve { points, gt_count }
}

/// All-point interpolated area under a PR curve: at every recall increase,
/// the increment times the best precision reachable at that recall or beyond.
pub fn auc(curve: &PrCurve) -> f64 {
    if curve.gt_count == 0 || curve.points.is_empty() {
        return 0.0;
    }
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.precision).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.points.iter().zip(envelope) {
        if p.recall > prev_recall {
            area += (p.recall - prev_recall) * env;
            prev_recall = p.recall;
        }
    }
    area
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: Category,
    /// One value per threshold, in [`MetricTable::thresholds`] order.
    pub per_threshold: Vec<f64>,
    pub mean: f64,
    pub gt_count: usize,
    pub pred_count: usize,
    /// Categories with neither ground truth nor predictions are left out of
    /// the overall mean.
    pub included: bool,
}

/// AP (or GAP) per category and threshold, with means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub thresholds: Vec<f64>,
    pub categories: Vec<CategoryScore>,
    /// Mean over included categories (mAP / mGAP).
    pub mean: f64,
}

impl MetricTable {
    pub fn category(&self, category: Category) -> Option<&CategoryScore> {
        self.categories.iter().find(|c| c.category == category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub thresholds: Vec<f64>,
    pub chamfer_samples: usize,
    pub chamfer_variant: String,
    pub interpolation: String,
    pub ap_pooling: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builder: Option<BuilderParams>,
}

impl ReportMetadata {
    pub fn new(thresholds: &[f64], builder: Option<BuilderParams>) -> Self {
        Self {
            thresholds: thresholds.to_vec(),
            chamfer_samples: CHAMFER_SAMPLES,
            chamfer_variant: "symmetric mean of point-to-polyline minima".into(),
            interpolation: "all-point precision envelope".into(),
            ap_pooling: "detections pooled across frames before one PR curve".into(),
            builder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap: Option<MetricTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<MetricTable>,
    pub metadata: ReportMetadata,
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), MetricsError> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(MetricsError::NoThresholds);
    }
    Ok(())
}

fn table_from_pairs(pairs: &[(&VectorMap, &VectorMap)], thresholds: &[f64]) -> Result<MetricTable, MetricsError> {
    check_thresholds(thresholds)?;
    let costs = pairs
        .iter()
        .map(|(p, g)| FrameCosts::new(p, g))
        .collect::<Result<Vec<_>, _>>()?;
    let mut gt_counts = [0usize; 3];
    let mut pred_counts = [0usize; 3];
    for (fc, (pred, _)) in costs.iter().zip(pairs) {
        for (ci, c) in Category::ELEMENTS.into_iter().enumerate() {
            gt_counts[ci] += fc.gt_counts[ci];
            pred_counts[ci] += pred.of_category(c).count();
        }
    }
    let mut per_category: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for &t in thresholds {
        let mut pooled: Vec<Vec<Detection>> = vec![Vec::new(); 3];
        for (frame_index, fc) in costs.iter().enumerate() {
            for d in fc.detections(t, frame_index).detections {
                pooled[category_index(d.category)].push(d);
            }
        }
        for ci in 0..3 {
            per_category[ci].push(auc(&pr_curve(&pooled[ci], gt_counts[ci])));
        }
    }
    let categories: Vec<CategoryScore> = Category::ELEMENTS
        .into_iter()
        .enumerate()
        .map(|(ci, category)| {
            let values = &per_category[ci];
            CategoryScore {
                category,
                mean: values.iter().sum::<f64>() / values.len() as f64,
                per_threshold: values.clone(),
                gt_count: gt_counts[ci],
                pred_count: pred_counts[ci],
                included: gt_counts[ci] + pred_counts[ci] > 0,
            }
        })
        .collect();
    let included: Vec<f64> = categories.iter().filter(|c| c.included).map(|c| c.mean).collect();
    let mean = if included.is_empty() {
        0.0
    } else {
        included.iter().sum::<f64>() / included.len() as f64
    };
    Ok(MetricTable { thresholds: thresholds.to_vec(), categories, mean })
}

/// AP over aligned prediction / ground-truth frame streams.
pub fn ap_stream(preds: &[VectorMap], gts: &[VectorMap], thresholds: &[f64]) -> Result<MetricTable, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch { preds: preds.len(), gts: gts.len() });
    }
    let pairs: Vec<_> = preds.iter().zip(gts).collect();
    table_from_pairs(&pairs, thresholds)
}

/// GAP of a predicted global map against the ground-truth global map.
pub fn gap_map(pred: &VectorMap, gt: &VectorMap, thresholds: &[f64]) -> Result<MetricTable, MetricsError> {
    pred.expect_frame(Frame::Global)?;
    gt.expect_frame(Frame::Global)?;
    table_from_pairs(&[(pred, gt)], thresholds)
}
