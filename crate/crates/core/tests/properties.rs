use globalmap::builder::{map_nms, BuilderParams, GlobalMapState};
use globalmap::geometry::{
    buffered_iou, chamfer_distance, point_to_polyline_distance, resample_polyline, transform_polyline, Direction,
};
use globalmap::map_model::{clip_map, map_to_global, MIN_FRAGMENT_LENGTH, Category, ClipWindow, ElementId, Frame, MapElement, PerCategory, Pose, VectorMap};
use globalmap::metrics::{auc, gap_map, match_frame, pr_curve};
use globalmap::rasterizer::{clip_and_rasterize, rasterize_soft, traced_mask, GridSpec, TracedRegion};
use globalmap::simulator::{generate_ground_truth, perceive, NoiseConfig, ScoreModel, WorldConfig};
use globalmap::{Point2, Polyline};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

fn point() -> impl Strategy<Value = Point2> {
    (coord(), coord()).prop_map(|(x, y)| Point2::new(x, y))
}

fn polyline() -> impl Strategy<Value = Polyline> {
    (prop::collection::vec(point(), 2..8), any::<bool>()).prop_filter_map("degenerate", |(pts, closed)| {
        let closed = closed && pts.len() >= 3;
        Polyline::new_dedup(pts, closed).ok().filter(|p| p.length() > 0.5)
    })
}

/// Open, strictly x-monotone, so arc positions are unambiguous.
fn monotone_polyline() -> impl Strategy<Value = Polyline> {
    (coord(), prop::collection::vec((0.5..10.0f64, -8.0..8.0f64), 1..7)).prop_map(|(x0, steps)| {
        let mut pts = vec![Point2::new(x0, 0.0)];
        for (dx, y) in steps {
            let last = *pts.last().unwrap();
            pts.push(Point2::new(last.x + dx, y));
        }
        Polyline::open(pts).unwrap()
    })
}

fn pose() -> impl Strategy<Value = Pose> {
    (-200.0..200.0f64, -200.0..200.0f64, -3.2..3.2f64).prop_map(|(x, y, yaw)| Pose::new(x, y, yaw))
}

fn close(a: Point2, b: Point2, tol: f64) -> bool {
    (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol
}

fn same_geometry(a: &Polyline, b: &Polyline, tol: f64) -> bool {
    a.is_closed() == b.is_closed()
        && a.num_points() == b.num_points()
        && a.points().iter().zip(b.points()).all(|(p, q)| close(*p, *q, tol))
}

fn global_map(polys: Vec<(Polyline, u8)>) -> VectorMap {
    let elements = polys
        .into_iter()
        .enumerate()
        .map(|(i, (g, c))| {
            MapElement::new(ElementId(i as u64), Category::ELEMENTS[c as usize % 3], g, 1.0).unwrap()
        })
        .collect();
    VectorMap::new(Frame::Global, elements).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chamfer_symmetric_and_zero_on_self(a in polyline(), b in polyline()) {
        prop_assert_eq!(chamfer_distance(&a, &b), chamfer_distance(&b, &a));
        prop_assert_eq!(chamfer_distance(&a, &a), 0.0);
        prop_assert!(chamfer_distance(&a, &b) >= 0.0);
    }

    #[test]
    fn chamfer_invariant_under_joint_motion(a in polyline(), b in polyline(), t in pose()) {
        let ta = transform_polyline(&a, &t, Direction::EgoToGlobal);
        let tb = transform_polyline(&b, &t, Direction::EgoToGlobal);
        prop_assert!((chamfer_distance(&ta, &tb) - chamfer_distance(&a, &b)).abs() <= 1e-9);
    }

    #[test]
    fn distance_bounded_by_vertices(p in polyline(), q in point()) {
        let d = point_to_polyline_distance(q, &p);
        for v in p.points() {
            prop_assert!(d <= q.dist(*v));
        }
    }

    #[test]
    fn resample_gaps_are_equal(p in monotone_polyline(), n in 2usize..60) {
        let r = resample_polyline(&p, n).unwrap();
        prop_assert_eq!(r.num_points(), n);
        let arcs: Vec<f64> = r.points().iter().map(|&q| p.project(q).arc_length).collect();
        let gap = p.length() / (n - 1) as f64;
        for w in arcs.windows(2) {
            prop_assert!((w[1] - w[0] - gap).abs() <= 1e-9, "gap {} vs {}", w[1] - w[0], gap);
        }
    }

    #[test]
    fn transform_round_trip(p in polyline(), t in pose()) {
        let there = transform_polyline(&p, &t, Direction::GlobalToEgo);
        let back = transform_polyline(&there, &t, Direction::EgoToGlobal);
        prop_assert!(same_geometry(&p, &back, 1e-9));
    }

    #[test]
    fn iou_in_unit_range(a in polyline(), b in polyline(), r in 0.2..3.0f64) {
        let v = buffered_iou(&a, &b, r).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, buffered_iou(&b, &a, r).unwrap());
        prop_assert!((buffered_iou(&a, &a.reversed(), r).unwrap() - 1.0).abs() < 1e-9);
    }

    /// The buffer of a single segment is convex, so overlap with a shifted
    /// copy can only shrink as the shift grows.
    #[test]
    fn iou_shrinks_as_segments_separate(a in point(), b in point(), dir in -3.2..3.2f64, r in 0.3..2.0f64) {
        prop_assume!(a.dist(b) > 0.5);
        let seg = Polyline::open(vec![a, b]).unwrap();
        let d = Point2::new(dir.cos(), dir.sin());
        let mut prev = 1.0;
        for k in 1..12 {
            let shift = d * (0.4 * k as f64);
            let moved = Polyline::open(vec![a + shift, b + shift]).unwrap();
            let v = buffered_iou(&seg, &moved, r).unwrap();
            prop_assert!(v <= prev + 1e-9, "iou rose from {} to {} at step {}", prev, v, k);
            prev = v;
        }
    }

    #[test]
    fn clip_is_equivariant(polys in prop::collection::vec((polyline(), 0u8..3), 1..6), p in pose(), t in pose()) {
        let m = global_map(polys);
        let window = ClipWindow::new(40.0, 20.0).unwrap();
        let moved = VectorMap::new(
            Frame::Global,
            m.elements().iter().map(|e| e.transformed(&t, Direction::EgoToGlobal)).collect(),
        ).unwrap();
        let a = clip_map(&m, &p, &window).unwrap();
        let b = clip_map(&moved, &t.compose(&p), &window).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (fa, fb) in a.iter().zip(&b) {
            prop_assert_eq!(fa.parent_id, fb.parent_id);
            prop_assert!((fa.arc_offset - fb.arc_offset).abs() <= 1e-9);
            prop_assert!(same_geometry(&fa.element.geometry, &fb.element.geometry, 1e-9));
        }
    }

    #[test]
    fn clip_is_idempotent_and_inside(polys in prop::collection::vec((polyline(), 0u8..3), 1..6), p in pose()) {
        let p = Pose::new(p.x / 10.0, p.y / 10.0, p.yaw);
        let m = global_map(polys);
        let window = ClipWindow::new(40.0, 20.0).unwrap();
        let once = clip_map(&m, &p, &window).unwrap();
        for f in &once {
            for q in f.element.geometry.points() {
                prop_assert!(window.contains(*q, 1e-6));
            }
        }
        let as_global = map_to_global(
            &globalmap::map_model::fragments_to_local_map(once.clone()),
            &p,
        ).unwrap();
        let twice = clip_map(&as_global, &p, &window).unwrap();
        prop_assert_eq!(once.len(), twice.len());
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!(same_geometry(&a.element.geometry, &b.element.geometry, 1e-9));
        }
    }

    #[test]
    fn fragments_advance_along_parent(p in monotone_polyline(), pose in pose()) {
        let pose = Pose::new(p.first().x + 10.0 + pose.x / 20.0, pose.y / 40.0, pose.yaw);
        let m = global_map(vec![(p, 1)]);
        let frags = clip_map(&m, &pose, &ClipWindow::new(20.0, 6.0).unwrap()).unwrap();
        for w in frags.windows(2) {
            prop_assert!(w[1].arc_offset > w[0].arc_offset + w[0].element.geometry.length() - 1e-9);
        }
    }
}

fn noisy() -> NoiseConfig {
    NoiseConfig {
        point_sigma: 0.3,
        pose_sigma_xy: 0.2,
        pose_sigma_yaw_deg: 0.5,
        drop_prob: 0.1,
        spurious_rate: 2.0,
        score_model: ScoreModel::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn merges_keep_nms_invariant_and_bounded_growth(seed in any::<u64>(), x in 0.0..100.0f64, yaw in -3.2..3.2f64) {
        let gt = generate_ground_truth(&WorldConfig::default()).unwrap();
        let params = BuilderParams::default();
        let mut state = GlobalMapState::new();
        for k in 0..5u64 {
            let pose = Pose::new(x + 6.0 * k as f64, 0.0, yaw);
            let local = perceive(&gt, &pose, &noisy(), &params.window, seed.wrapping_add(k)).unwrap();
            let before = state.map().len();
            state.merge_step(&local, &pose, &params).unwrap();
            prop_assert!(state.map().len() <= before + local.len());
            let els = state.map().elements();
            for (i, a) in els.iter().enumerate() {
                for b in &els[i + 1..] {
                    if a.category == b.category {
                        let r = params.nms_buffer.get(a.category);
                        let v = buffered_iou(&a.geometry, &b.geometry, r).unwrap();
                        prop_assert!(v < params.nms_iou_threshold, "{} vs {}: {}", a.id, b.id, v);
                    }
                }
            }
        }
    }

    #[test]
    fn merging_own_clip_changes_nothing(x in 0.0..100.0f64, y in 0.0..100.0f64, yaw in -3.2..3.2f64) {
        let gt = generate_ground_truth(&WorldConfig::default()).unwrap();
        let params = BuilderParams::default();
        let mut state = GlobalMapState::from_map(gt.clone()).unwrap();
        let pose = Pose::new(x, y, yaw);
        let local = globalmap::simulator::local_ground_truth(&gt, &pose, &params.window).unwrap();
        state.merge_step(&local, &pose, &params).unwrap();
        // A ring crossing the window twice releases one of its two locals,
        // which is appended; existing elements must not move.
        prop_assert!(state.map().len() <= gt.len() + local.len());
        for e in gt.elements() {
            let after = state.map().get(e.id).expect("element kept");
            prop_assert!(chamfer_distance(&after.geometry, &e.geometry) < 1e-6, "element {} moved", e.id);
        }
    }

    #[test]
    fn extension_grows_parent(len in 5.0..30.0f64, ext in 1.0..8.0f64, y in -0.3..0.3f64) {
        let parent = Polyline::open(vec![Point2::new(0.0, 0.0), Point2::new(len, 0.0)]).unwrap();
        let gmap = VectorMap::new(Frame::Global, vec![
            MapElement::new(ElementId(0), Category::LaneDivider, parent, 1.0).unwrap(),
        ]).unwrap();
        let mut state = GlobalMapState::from_map(gmap).unwrap();
        let local = Polyline::open(vec![Point2::new(len - 4.0, y), Point2::new(len + ext, y)]).unwrap();
        let mut params = BuilderParams::default();
        params.match_distance = PerCategory::splat(10.0);
        let lm = VectorMap::new(Frame::Ego, vec![
            MapElement::new(ElementId(0), Category::LaneDivider, local, 1.0).unwrap(),
        ]).unwrap();
        state.merge_step(&lm, &Pose::identity(), &params).unwrap();
        prop_assert_eq!(state.map().len(), 1);
        prop_assert!(state.map().elements()[0].geometry.length() > len);
    }
}

fn scored_map(items: &[(Polyline, u8, f64)]) -> VectorMap {
    let elements = items
        .iter()
        .enumerate()
        .map(|(i, (g, c, s))| MapElement::new(ElementId(i as u64), Category::ELEMENTS[*c as usize % 3], g.clone(), *s).unwrap())
        .collect();
    VectorMap::new(Frame::Global, elements).unwrap()
}

fn short_segment() -> impl Strategy<Value = Polyline> {
    ((0.0..20.0f64, 0.0..20.0f64), (-4.0..4.0f64, -4.0..4.0f64)).prop_filter_map("short", |((x, y), (dx, dy))| {
        Polyline::open(vec![Point2::new(x, y), Point2::new(x + dx, y + dy)]).ok().filter(|p| p.length() > 0.5)
    })
}

fn frame_pair() -> impl Strategy<Value = (VectorMap, VectorMap)> {
    (
        prop::collection::vec((short_segment(), 0u8..3, 0.0..1.0f64), 0..8),
        prop::collection::vec((short_segment(), 0u8..3), 0..8),
    )
        .prop_map(|(p, g)| {
            let gt: Vec<_> = g.into_iter().map(|(s, c)| (s, c, 1.0)).collect();
            (scored_map(&p), scored_map(&gt))
        })
}

fn rescore(m: &VectorMap, f: impl Fn(f64) -> f64) -> VectorMap {
    VectorMap::new(
        m.frame(),
        m.elements().iter().map(|e| MapElement { score: f(e.score), ..e.clone() }).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gap_depends_only_on_score_ranks((pred, gt) in frame_pair()) {
        let th = [0.5, 1.0, 1.5];
        let base = gap_map(&pred, &gt, &th).unwrap();
        let squashed = gap_map(&rescore(&pred, |s| 0.1 + 0.5 * s * s), &gt, &th).unwrap();
        prop_assert_eq!(&base, &squashed);
        prop_assert!((0.0..=1.0).contains(&base.mean));
        for c in &base.categories {
            for v in &c.per_threshold {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn ap_non_decreasing_in_threshold((pred, gt) in frame_pair()) {
        let t = gap_map(&pred, &gt, &[0.25, 0.5, 1.0, 2.0, 4.0]).unwrap();
        for c in &t.categories {
            for w in c.per_threshold.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12, "{:?}: {:?}", c.category, c.per_threshold);
            }
        }
    }

    #[test]
    fn dropping_detections((pred, gt) in frame_pair(), which in any::<prop::sample::Index>()) {
        let m = match_frame(&pred, &gt, 1.0).unwrap();
        prop_assume!(!m.detections.is_empty());
        let i = which.index(m.detections.len());
        let cat = m.detections[i].category;
        let gt_count = gt.of_category(cat).count();
        let of_cat: Vec<_> = m.detections.iter().copied().filter(|d| d.category == cat).collect();
        let j = of_cat.iter().position(|d| *d == m.detections[i]).unwrap();
        let mut rest = of_cat.clone();
        let removed = rest.remove(j);
        let full = pr_curve(&of_cat, gt_count);
        let less = pr_curve(&rest, gt_count);
        if removed.is_tp {
            let end = |c: &globalmap::metrics::PrCurve| c.points.last().map_or(0.0, |p| p.recall);
            prop_assert!(end(&less) <= end(&full));
        } else {
            prop_assert!(auc(&less) >= auc(&full));
        }
    }

    #[test]
    fn gap_of_map_with_itself_is_one(segs in prop::collection::vec(short_segment(), 3..9)) {
        let items: Vec<_> = segs.into_iter().enumerate().map(|(i, s)| (s, (i % 3) as u8, 0.7)).collect();
        let m = scored_map(&items);
        prop_assert_eq!(gap_map(&m, &m, &[0.5, 1.0, 1.5]).unwrap().mean, 1.0);
    }
}

fn one_cell_spec() -> GridSpec {
    GridSpec::new(ClipWindow::new(20.0, 10.0).unwrap(), 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn doubling_tau_takes_square_root(seg in short_segment(), tau in 0.2..3.0f64) {
        let shifted = transform_polyline(&seg, &Pose::new(-10.0, -10.0, 0.0), Direction::EgoToGlobal);
        let e = MapElement::new(ElementId(0), Category::LaneDivider, shifted, 1.0).unwrap();
        let spec = one_cell_spec();
        let a = rasterize_soft(std::slice::from_ref(&e), &spec, tau).unwrap();
        let b = rasterize_soft(std::slice::from_ref(&e), &spec, 2.0 * tau).unwrap();
        for (v, w) in a[0].values.iter().zip(&b[0].values) {
            prop_assert!((w - v.sqrt()).abs() <= 1e-9);
            prop_assert!(w >= v);
            prop_assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn intensity_falls_with_distance(seg in short_segment(), tau in 0.2..3.0f64) {
        let shifted = transform_polyline(&seg, &Pose::new(-10.0, -10.0, 0.0), Direction::EgoToGlobal);
        let e = MapElement::new(ElementId(0), Category::RoadBoundary, shifted.clone(), 1.0).unwrap();
        let spec = one_cell_spec();
        let m = &rasterize_soft(&[e], &spec, tau).unwrap()[0];
        let mut cells: Vec<(f64, f64)> = (0..spec.rows())
            .flat_map(|r| (0..spec.cols()).map(move |c| (r, c)))
            .map(|(r, c)| (shifted.distance_to(spec.cell_center(r, c)), m.get(r, c)))
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in cells.windows(2) {
            prop_assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn rasterizing_clip_matches_ego_rasterization(polys in prop::collection::vec((polyline(), 0u8..3), 1..5), p in pose()) {
        let p = Pose::new(p.x / 10.0, p.y / 10.0, p.yaw);
        let m = global_map(polys);
        let spec = one_cell_spec();
        let via_global = clip_and_rasterize(&m, &TracedRegion::new(), &p, &spec, 1.0).unwrap();
        // Unclipped ego-frame elements. A cell may differ only when its
        // nearest geometry is outside the window or on a dropped sliver,
        // and slivers lie within MIN_FRAGMENT_LENGTH of the edge.
        let ego: Vec<MapElement> = m.elements().iter().map(|e| e.transformed(&p, Direction::GlobalToEgo)).collect();
        let direct = rasterize_soft(&ego, &spec, 1.0).unwrap();
        for d in &direct {
            let g = via_global.iter().find(|g| g.category == d.category).unwrap();
            for r in 0..spec.rows() {
                for c in 0..spec.cols() {
                    let centre = spec.cell_center(r, c);
                    let to_edge = (spec.window.length / 2.0 - centre.x.abs()).min(spec.window.width / 2.0 - centre.y.abs());
                    let (dv, gv) = (d.get(r, c), g.get(r, c));
                    prop_assert!(gv <= dv + 1e-12);
                    if -dv.ln() <= to_edge - MIN_FRAGMENT_LENGTH {
                        prop_assert!((dv - gv).abs() <= 1e-9, "cell ({}, {}): {} vs {}", r, c, dv, gv);
                    }
                }
            }
        }
    }

    #[test]
    fn traced_mask_is_binary(poses in prop::collection::vec(pose(), 0..4), at in pose()) {
        let mut tr = TracedRegion::new();
        for p in poses {
            tr.update(Pose::new(p.x / 10.0, p.y / 10.0, p.yaw), ClipWindow::new(30.0, 15.0).unwrap());
        }
        let m = traced_mask(&tr, &Pose::new(at.x / 10.0, at.y / 10.0, at.yaw), &one_cell_spec());
        prop_assert!(m.values.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn nms_survivors_are_pairwise_below_threshold(segs in prop::collection::vec((short_segment(), 0.0..1.0f64), 1..10)) {
        let items: Vec<_> = segs.into_iter().map(|(s, score)| (s, 1u8, score)).collect();
        let m = scored_map(&items);
        let params = BuilderParams::default();
        let kept = map_nms(m.elements(), &params).unwrap();
        prop_assert!(!kept.is_empty());
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(buffered_iou(&a.geometry, &b.geometry, 1.0).unwrap() < params.nms_iou_threshold);
            }
        }
        // The best-scoring element always survives.
        let best = m.elements().iter().max_by(|a, b| a.score.total_cmp(&b.score).then(a.id.cmp(&b.id))).unwrap();
        prop_assert!(kept.iter().any(|e| e.id == best.id));
    }
}
