//! Library results checked against slow, independent reference computations.

use globalmap::builder::assignment;
use globalmap::geometry::{buffered_area, buffered_iou, chamfer_distance};
use globalmap::metrics::{auc, pr_curve, Detection};
use globalmap::rasterizer::{rasterize_soft, GridSpec};
use globalmap::{Category, ClipWindow, ElementId, MapElement, Point2, Polyline};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pl(pts: &[(f64, f64)]) -> Polyline {
    Polyline::open(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
}

fn seg_dist(q: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((q.0 - a.0) * dx + (q.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    ((q.0 - a.0 - t * dx).powi(2) + (q.1 - a.1 - t * dy).powi(2)).sqrt()
}

fn dist_to(q: (f64, f64), poly: &[(f64, f64)]) -> f64 {
    poly.windows(2).map(|w| seg_dist(q, w[0], w[1])).fold(f64::INFINITY, f64::min)
}

/// `n` points evenly spaced by arc length, endpoints included.
fn dense(poly: &[(f64, f64)], n: usize) -> Vec<(f64, f64)> {
    let lens: Vec<f64> = poly.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).collect();
    let total: f64 = lens.iter().sum();
    (0..n)
        .map(|i| {
            let mut s = total * i as f64 / (n - 1) as f64;
            for (k, &l) in lens.iter().enumerate() {
                if s <= l || k == lens.len() - 1 {
                    let t = (s / l).min(1.0);
                    let (a, b) = (poly[k], poly[k + 1]);
                    return (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                }
                s -= l;
            }
            unreachable!()
        })
        .collect()
}

fn sampled_chamfer(a: &[(f64, f64)], b: &[(f64, f64)], n: usize) -> f64 {
    let one = |p: &[(f64, f64)], q: &[(f64, f64)]| dense(p, n).iter().map(|&s| dist_to(s, q)).sum::<f64>() / n as f64;
    0.5 * (one(a, b) + one(b, a))
}

#[test]
fn chamfer_matches_reference_sampling() {
    let cases: [(&[(f64, f64)], &[(f64, f64)]); 4] = [
        (&[(0.0, 0.0), (10.0, 0.0)], &[(0.0, 0.0), (10.0, 2.0)]),
        (&[(0.0, 0.0), (10.0, 0.0)], &[(0.0, 1.0), (10.0, 1.0)]),
        (&[(0.0, 0.0), (5.0, 3.0), (10.0, 0.0)], &[(0.0, 0.5), (10.0, 0.5)]),
        (&[(0.0, 0.0), (4.0, 0.0), (4.0, 4.0)], &[(1.0, 1.0), (3.0, 1.0), (3.0, 6.0)]),
    ];
    for (k, (a, b)) in cases.into_iter().enumerate() {
        let got = chamfer_distance(&pl(a), &pl(b));
        let same_rule = sampled_chamfer(a, b, 100);
        assert!((got - same_rule).abs() < 1e-9, "{a:?} vs {b:?}: {got} vs {same_rule}");
        // The first two pairs have linear distance profiles, where 100
        // samples already give the continuous mean.
        let tol = if k < 2 { 1e-3 } else { 1e-2 };
        let continuous = sampled_chamfer(a, b, 10_000);
        assert!((got - continuous).abs() < tol, "{a:?} vs {b:?}: {got} vs {continuous}");
    }
    // Closed form for the diverging pair: both one-way profiles are linear.
    let got = chamfer_distance(&pl(&[(0.0, 0.0), (10.0, 0.0)]), &pl(&[(0.0, 0.0), (10.0, 2.0)]));
    assert!((got - 0.5 * (1.0 / 1.04f64.sqrt() + 1.0)).abs() < 1e-9);
}

fn monte_carlo_iou(a: &[(f64, f64)], b: &[(f64, f64)], r: f64, samples: usize, seed: u64) -> f64 {
    let all: Vec<_> = a.iter().chain(b).collect();
    let lo = (all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - r, all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - r);
    let hi = (all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + r, all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let q = (rng.random_range(lo.0..hi.0), rng.random_range(lo.1..hi.1));
        let (ia, ib) = (dist_to(q, a) <= r, dist_to(q, b) <= r);
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    inter as f64 / union as f64
}

#[test]
fn buffered_iou_matches_monte_carlo() {
    let a = [(0.0, 0.0), (10.0, 0.0)];
    let b = [(0.0, 1.0), (10.0, 1.0)];
    let got = buffered_iou(&pl(&a), &pl(&b), 1.0).unwrap();
    let want = monte_carlo_iou(&a, &b, 1.0, 1_000_000, 7);
    assert!((got - want).abs() < 0.01, "{got} vs {want}");

    let c = [(0.0, 0.0), (3.0, 2.0), (6.0, -1.0), (9.0, 1.5)];
    let d = [(1.0, 0.5), (8.0, 0.0)];
    let got = buffered_iou(&pl(&c), &pl(&d), 0.75).unwrap();
    let want = monte_carlo_iou(&c, &d, 0.75, 1_000_000, 8);
    assert!((got - want).abs() < 0.01, "{got} vs {want}");
}

#[test]
fn zigzag_buffer_area_matches_membership_count() {
    // Tight zigzag: neighbouring legs' buffers overlap heavily.
    let zig = [(0.0, 0.0), (1.0, 2.0), (2.0, 0.0), (3.0, 2.0), (4.0, 0.0), (5.0, 2.0)];
    let r = 0.6;
    let (x0, x1, y0, y1) = (-r, 5.0 + r, -r, 2.0 + r);
    let n = 1000;
    let mut inside = 0usize;
    for i in 0..n {
        for j in 0..n {
            let q = (x0 + (x1 - x0) * (i as f64 + 0.5) / n as f64, y0 + (y1 - y0) * (j as f64 + 0.5) / n as f64);
            inside += (dist_to(q, &zig) <= r) as usize;
        }
    }
    let want = inside as f64 * (x1 - x0) * (y1 - y0) / (n * n) as f64;
    let got = buffered_area(&pl(&zig), r).unwrap();
    assert!((got - want).abs() / want < 0.005, "{got} vs {want}");
}

fn permutations(n: usize, k: usize) -> Vec<Vec<usize>> {
    // Ordered selections of k distinct items from 0..n.
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n, k - 1) {
        for c in 0..n {
            if !rest.contains(&c) {
                let mut v = rest.clone();
                v.push(c);
                out.push(v);
            }
        }
    }
    out
}

#[test]
fn assignment_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(1..=6);
        // Small integer costs make ties common and sums exact.
        let cost: Vec<Vec<f64>> =
            (0..rows).map(|_| (0..cols).map(|_| rng.random_range(0..20) as f64).collect()).collect();
        let got = assignment::solve(&cost);
        assert_eq!(got.iter().flatten().count(), rows.min(cols));
        let mut used = vec![false; cols];
        for c in got.iter().flatten() {
            assert!(!used[*c], "column {c} used twice");
            used[*c] = true;
        }
        let total: f64 = got.iter().enumerate().filter_map(|(r, c)| c.map(|c| cost[r][c])).sum();
        let best = if rows <= cols {
            permutations(cols, rows).iter().map(|p| p.iter().enumerate().map(|(r, &c)| cost[r][c]).sum::<f64>()).fold(f64::INFINITY, f64::min)
        } else {
            permutations(rows, cols).iter().map(|p| p.iter().enumerate().map(|(c, &r)| cost[r][c]).sum::<f64>()).fold(f64::INFINITY, f64::min)
        };
        assert_eq!(total, best, "{cost:?}");
    }
}

#[test]
fn worked_auc_example() {
    let det = |score, is_tp| Detection { score, is_tp, category: Category::LaneDivider, frame_index: 0 };
    let curve = pr_curve(&[det(0.9, true), det(0.8, false), det(0.7, true)], 2);
    assert!((auc(&curve) - 5.0 / 6.0).abs() < 1e-12);
    // A false positive ranked first caps every interpolated precision.
    let curve = pr_curve(&[det(0.9, false), det(0.8, true)], 1);
    assert!((auc(&curve) - 0.5).abs() < 1e-12);
    // Unreached recall contributes nothing.
    let curve = pr_curve(&[det(0.9, true)], 4);
    assert!((auc(&curve) - 0.25).abs() < 1e-12);
}

#[test]
fn soft_mask_matches_pointwise_distance() {
    let window = ClipWindow::new(12.0, 8.0).unwrap();
    let spec = GridSpec::new(window, 0.5).unwrap();
    let pts = [(-5.0, -1.0), (0.0, 2.5), (4.0, -3.0)];
    let el = MapElement::new(ElementId(0), Category::RoadBoundary, pl(&pts), 1.0).unwrap();
    let tau = 1.5;
    let masks = rasterize_soft(&[el], &spec, tau).unwrap();
    assert_eq!(masks.len(), 1);
    for row in 0..spec.rows() {
        for col in 0..spec.cols() {
            let c = spec.cell_center(row, col);
            let want = (-dist_to((c.x, c.y), &pts) / tau).exp();
            let got = masks[0].get(row, col);
            assert!((got - want).abs() < 1e-9, "({row}, {col}): {got} vs {want}");
        }
    }
}
