//! Planar geometry: points, polylines, SE(2) poses, projections, Chamfer
//! distance and buffered IoU.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of resampled points per polyline used by [`chamfer_distance`].
pub const CHAMFER_SAMPLES: usize = 100;

/// Minimum separation between consecutive polyline vertices.
pub const MIN_VERTEX_SEPARATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite coordinate at vertex {0}")]
    NonFinite(usize),
    #[error("vertices {0} and {1} coincide")]
    DuplicateVertex(usize, usize),
    #[error("resample count must be at least 2, got {0}")]
    ResampleCount(usize),
    #[error("buffer radius must be positive, got {0}")]
    BufferRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Point2::new(x, y)
    }
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = angle.rem_euclid(two_pi);
    if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Ego pose in the global frame. `yaw` is in radians, kept in (-π, π].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: normalize_angle(yaw) }
    }

    pub fn from_degrees(x: f64, y: f64, yaw_deg: f64) -> Self {
        Self::new(x, y, yaw_deg.to_radians())
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn yaw_degrees(&self) -> f64 {
        self.yaw.to_degrees()
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn ego_to_global(&self, p: Point2) -> Point2 {
        let (s, c) = self.yaw.sin_cos();
        Point2::new(c * p.x - s * p.y + self.x, s * p.x + c * p.y + self.y)
    }

    pub fn global_to_ego(&self, p: Point2) -> Point2 {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Point2::new(c * dx + s * dy, -s * dx + c * dy)
    }

    /// `self ∘ other`: the pose `other` (expressed in this pose's frame)
    /// mapped into the frame this pose lives in.
    pub fn compose(&self, other: &Pose) -> Pose {
        let p = self.ego_to_global(other.position());
        Pose::new(p.x, p.y, self.yaw + other.yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    EgoToGlobal,
    GlobalToEgo,
}

/// Closest point on a polyline, as arc length from the start plus distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub arc_length: f64,
    pub distance: f64,
}

/// Ordered 2-D point sequence, optionally closed (last vertex joins the first).
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point2>,
    closed: bool,
}

impl Polyline {
    /// Validates vertices. A closed polyline given with its first vertex
    /// repeated at the end has the repeat dropped.
    pub fn new(mut points: Vec<Point2>, closed: bool) -> Result<Self, GeometryError> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        if closed && points.len() > 2 {
            let n = points.len();
            if points[0].dist(points[n - 1]) <= MIN_VERTEX_SEPARATION {
                points.pop();
            }
        }
        if points.len() < 2 {
            return Err(GeometryError::TooFewPoints(points.len()));
        }
        for i in 1..points.len() {
            if points[i - 1].dist(points[i]) <= MIN_VERTEX_SEPARATION {
                return Err(GeometryError::DuplicateVertex(i - 1, i));
            }
        }
        if closed && points[0].dist(points[points.len() - 1]) <= MIN_VERTEX_SEPARATION {
            return Err(GeometryError::DuplicateVertex(points.len() - 1, 0));
        }
        Ok(Self { points, closed })
    }

    pub fn open(points: Vec<Point2>) -> Result<Self, GeometryError> {
        Self::new(points, false)
    }

    pub fn closed(points: Vec<Point2>) -> Result<Self, GeometryError> {
        Self::new(points, true)
    }

    /// Like [`Polyline::new`], but silently drops vertices that coincide
    /// with their predecessor.
    pub fn new_dedup(points: Vec<Point2>, closed: bool) -> Result<Self, GeometryError> {
        let mut kept: Vec<Point2> = Vec::with_capacity(points.len());
        for (i, p) in points.into_iter().enumerate() {
            if !p.is_finite() {
                return Err(GeometryError::NonFinite(i));
            }
            match kept.last() {
                Some(last) if last.dist(p) <= MIN_VERTEX_SEPARATION => {}
                _ => kept.push(p),
            }
        }
        if closed {
            while kept.len() > 2 && kept[0].dist(kept[kept.len() - 1]) <= MIN_VERTEX_SEPARATION {
                kept.pop();
            }
        }
        Self::new(kept, closed)
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point2> {
        self.points
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        self.points[self.points.len() - 1]
    }

    /// Segments in order, including the closing segment of a closed polyline.
    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n - 1 };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    /// Arc length at every vertex.
    pub fn vertex_arcs(&self) -> Vec<f64> {
        let mut arcs = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        arcs.push(0.0);
        for w in self.points.windows(2) {
            acc += w[0].dist(w[1]);
            arcs.push(acc);
        }
        arcs
    }

    /// Point at the given arc length. Open polylines clamp to their ends,
    /// closed ones wrap around.
    pub fn point_at(&self, arc: f64) -> Point2 {
        let total = self.length();
        let s = if self.closed {
            arc.rem_euclid(total)
        } else {
            arc.clamp(0.0, total)
        };
        let mut acc = 0.0;
        for (a, b) in self.segments() {
            let len = a.dist(b);
            if s <= acc + len {
                let t = if len > 0.0 { (s - acc) / len } else { 0.0 };
                return a.lerp(b, t.clamp(0.0, 1.0));
            }
            acc += len;
        }
        if self.closed {
            self.first()
        } else {
            self.last()
        }
    }

    /// `n` points at equal arc-length spacing. Open polylines keep both
    /// endpoints; closed ones start at the first vertex with spacing `L/n`.
    pub fn resample(&self, n: usize) -> Result<Polyline, GeometryError> {
        if n < 2 {
            return Err(GeometryError::ResampleCount(n));
        }
        let total = self.length();
        let step = if self.closed {
            total / n as f64
        } else {
            total / (n - 1) as f64
        };
        let segs: Vec<(Point2, Point2, f64)> =
            self.segments().map(|(a, b)| (a, b, a.dist(b))).collect();
        let mut out = Vec::with_capacity(n);
        let mut seg = 0;
        let mut seg_start = 0.0;
        for i in 0..n {
            if !self.closed && i == n - 1 {
                out.push(self.last());
                break;
            }
            let s = step * i as f64;
            while seg + 1 < segs.len() && s > seg_start + segs[seg].2 {
                seg_start += segs[seg].2;
                seg += 1;
            }
            let (a, b, len) = segs[seg];
            let t = ((s - seg_start) / len).clamp(0.0, 1.0);
            out.push(a.lerp(b, t));
        }
        Ok(Polyline { points: out, closed: self.closed })
    }

    pub fn distance_to(&self, q: Point2) -> f64 {
        self.segments()
            .map(|(a, b)| segment_distance(q, a, b).1)
            .fold(f64::INFINITY, f64::min)
    }

    /// Closest point on the polyline; ties resolve to the smallest arc length.
    pub fn project(&self, q: Point2) -> Projection {
        let mut best = Projection { arc_length: 0.0, distance: f64::INFINITY };
        let mut acc = 0.0;
        for (a, b) in self.segments() {
            let len = a.dist(b);
            let (t, d) = segment_distance(q, a, b);
            if d < best.distance {
                best = Projection { arc_length: acc + t * len, distance: d };
            }
            acc += len;
        }
        if self.closed && best.arc_length >= acc {
            best.arc_length = 0.0;
        }
        best.arc_length = best.arc_length.min(acc);
        best
    }

    pub fn transform(&self, pose: &Pose, direction: Direction) -> Polyline {
        let points = self
            .points
            .iter()
            .map(|&p| match direction {
                Direction::EgoToGlobal => pose.ego_to_global(p),
                Direction::GlobalToEgo => pose.global_to_ego(p),
            })
            .collect();
        Polyline { points, closed: self.closed }
    }

    pub fn reversed(&self) -> Polyline {
        let mut points = self.points.clone();
        points.reverse();
        Polyline { points, closed: self.closed }
    }

    /// Same geometry re-tagged as open; a closed ring gains its first vertex
    /// at the end.
    pub fn opened(&self) -> Polyline {
        let mut points = self.points.clone();
        if self.closed {
            points.push(self.points[0]);
        }
        Polyline { points, closed: false }
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

/// Returns (parameter along segment in [0,1], distance) of the closest point.
pub fn segment_distance(q: Point2, a: Point2, b: Point2) -> (f64, f64) {
    let d = b - a;
    let len2 = d.dot(d);
    let t = if len2 > 0.0 {
        ((q - a).dot(d) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let closest = if t >= 1.0 { b } else { a.lerp(b, t) };
    (t, q.dist(closest))
}

pub fn polyline_length(p: &Polyline) -> f64 {
    p.length()
}

pub fn resample_polyline(p: &Polyline, n: usize) -> Result<Polyline, GeometryError> {
    p.resample(n)
}

pub fn point_to_polyline_distance(q: Point2, p: &Polyline) -> f64 {
    p.distance_to(q)
}

pub fn project_point(q: Point2, p: &Polyline) -> Projection {
    p.project(q)
}

pub fn transform_polyline(p: &Polyline, pose: &Pose, direction: Direction) -> Polyline {
    p.transform(pose, direction)
}

/// Symmetric mean-of-minimum Chamfer distance: each polyline is resampled to
/// [`CHAMFER_SAMPLES`] points and measured against the continuous geometry
/// of the other.
pub fn chamfer_distance(a: &Polyline, b: &Polyline) -> f64 {
    if a == b {
        return 0.0;
    }
    let one_way = |from: &Polyline, to: &Polyline| -> f64 {
        let samples = from
            .resample(CHAMFER_SAMPLES)
            .expect("CHAMFER_SAMPLES >= 2");
        samples.points().iter().map(|&q| to.distance_to(q)).sum::<f64>()
            / CHAMFER_SAMPLES as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}

/// Target row spacing of the buffered-area integration.
const BUFFER_ROW_SPACING: f64 = 0.02;

/// Area of the disc-Minkowski sum of a polyline with radius `r`.
pub fn buffered_area(p: &Polyline, r: f64) -> Result<f64, GeometryError> {
    if !(r > 0.0) {
        return Err(GeometryError::BufferRadius(r));
    }
    let buf = BufferedPolyline::new(p, r);
    let dy = row_spacing(r);
    let mut area = 0.0;
    let mut row = Vec::new();
    for y in buf.rows(dy) {
        buf.row_intervals(y, &mut row);
        area += intervals_len(&row) * dy;
    }
    Ok(area)
}

/// IoU of the radius-`r` buffers (round caps and joins) of two polylines.
///
/// Areas are integrated row by row: each row's cross-section of a buffer is
/// a union of exact capsule chords, so only the vertical direction is
/// discretized (spacing ≤ 0.02 m, finer for small radii).
pub fn buffered_iou(a: &Polyline, b: &Polyline, r: f64) -> Result<f64, GeometryError> {
    if !(r > 0.0) {
        return Err(GeometryError::BufferRadius(r));
    }
    if a == b {
        return Ok(1.0);
    }
    let ba = BufferedPolyline::new(a, r);
    let bb = BufferedPolyline::new(b, r);
    if ba.lo.x > bb.hi.x || bb.lo.x > ba.hi.x || ba.lo.y > bb.hi.y || bb.lo.y > ba.hi.y {
        return Ok(0.0);
    }
    let dy = row_spacing(r);
    let (mut area_a, mut area_b, mut inter) = (0.0, 0.0, 0.0);
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    for y in ba.rows(dy) {
        ba.row_intervals(y, &mut ra);
        area_a += intervals_len(&ra) * dy;
        if y >= bb.lo.y && y <= bb.hi.y {
            bb.row_intervals(y, &mut rb);
            inter += intersection_len(&ra, &rb) * dy;
        }
    }
    for y in bb.rows(dy) {
        bb.row_intervals(y, &mut rb);
        area_b += intervals_len(&rb) * dy;
    }
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

fn row_spacing(r: f64) -> f64 {
    BUFFER_ROW_SPACING.min(r / 20.0)
}

struct BufferedPolyline {
    segments: Vec<(Point2, Point2)>,
    r: f64,
    lo: Point2,
    hi: Point2,
}

impl BufferedPolyline {
    fn new(p: &Polyline, r: f64) -> Self {
        let (lo, hi) = p.bounds();
        Self {
            segments: p.segments().collect(),
            r,
            lo: Point2::new(lo.x - r, lo.y - r),
            hi: Point2::new(hi.x + r, hi.y + r),
        }
    }

    /// Row midpoints on a grid anchored at y = 0, covering the bounding box.
    fn rows(&self, dy: f64) -> impl Iterator<Item = f64> {
        let k0 = (self.lo.y / dy).floor() as i64;
        let k1 = (self.hi.y / dy).ceil() as i64;
        (k0..k1).map(move |k| (k as f64 + 0.5) * dy)
    }

    /// Sorted disjoint x-intervals of the buffer on the horizontal line `y`.
    fn row_intervals(&self, y: f64, out: &mut Vec<(f64, f64)>) {
        out.clear();
        for &(a, b) in &self.segments {
            if y < a.y.min(b.y) - self.r || y > a.y.max(b.y) + self.r {
                continue;
            }
            if let Some(iv) = capsule_chord(a, b, self.r, y) {
                out.push(iv);
            }
        }
        out.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(out.len());
        for &(lo, hi) in out.iter() {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        *out = merged;
    }
}

/// Chord of the capsule (segment `a`–`b` inflated by `r`) on the line `y`.
/// The capsule is convex, so the chord is the hull of the chords of its two
/// end discs and its rectangular body.
fn capsule_chord(a: Point2, b: Point2, r: f64, y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in [a, b] {
        let dy = y - c.y;
        if dy.abs() <= r {
            let h = (r * r - dy * dy).sqrt();
            lo = lo.min(c.x - h);
            hi = hi.max(c.x + h);
        }
    }
    let d = b - a;
    let len = d.norm();
    if len > 0.0 {
        // Along-axis coordinate u(x) in [0, len], normal coordinate v(x) in [-r, r].
        let u = linear_range(d.x / len, (y - a.y) * d.y / len - a.x * d.x / len, 0.0, len);
        let v = linear_range(-d.y / len, (y - a.y) * d.x / len + a.x * d.y / len, -r, r);
        if let (Some(u), Some(v)) = (u, v) {
            let (l, h) = (u.0.max(v.0), u.1.min(v.1));
            if l <= h {
                lo = lo.min(l);
                hi = hi.max(h);
            }
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Solution set of `lo <= coef * x + offset <= hi`.
fn linear_range(coef: f64, offset: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if coef.abs() < 1e-15 {
        return (offset >= lo && offset <= hi).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let x0 = (lo - offset) / coef;
    let x1 = (hi - offset) / coef;
    Some((x0.min(x1), x0.max(x1)))
}

fn intervals_len(ivs: &[(f64, f64)]) -> f64 {
    ivs.iter().map(|(lo, hi)| hi - lo).sum()
}

fn intersection_len(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// Parameter interval of segment `a`–`b` inside the axis-aligned box
/// (Liang–Barsky).
pub fn clip_segment_to_box(a: Point2, b: Point2, lo: Point2, hi: Point2) -> Option<(f64, f64)> {
    let d = b - a;
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-d.x, a.x - lo.x),
        (d.x, hi.x - a.x),
        (-d.y, a.y - lo.y),
        (d.y, hi.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// A maximal connected sub-polyline produced by [`clip_pieces`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArcPiece {
    /// Arc length on the source polyline where the piece begins.
    pub start_arc: f64,
    pub polyline: Polyline,
}

/// Splits a polyline into its maximal connected pieces inside a region.
///
/// `inside(a, b)` returns the parameter intervals of segment `a`–`b` that lie
/// in the region. Pieces shorter than `min_length` are dropped. On a closed
/// polyline a piece running through the seam is joined into one, and a ring
/// lying entirely inside comes back closed.
pub fn clip_pieces<F>(poly: &Polyline, mut inside: F, min_length: f64) -> Vec<ArcPiece>
where
    F: FnMut(Point2, Point2) -> Vec<(f64, f64)>,
{
    const T_EPS: f64 = 1e-12;
    let mut pieces: Vec<(f64, Vec<Point2>)> = Vec::new();
    let mut current: Option<(f64, Vec<Point2>)> = None;
    let mut arc = 0.0;
    let mut reaches_end = false;
    let mut starts_at_origin = false;

    for (k, (a, b)) in poly.segments().enumerate() {
        let len = a.dist(b);
        let mut ivs = inside(a, b);
        ivs.retain(|(t0, t1)| t1 - t0 > T_EPS);
        ivs.sort_by(|p, q| p.0.total_cmp(&q.0));
        let continued = reaches_end;
        reaches_end = false;
        for (idx, &(t0, t1)) in ivs.iter().enumerate() {
            let (t0, t1) = (t0.max(0.0), t1.min(1.0));
            let p1 = a.lerp(b, t1);
            if idx == 0 && continued && t0 <= T_EPS && current.is_some() {
                current.as_mut().unwrap().1.push(p1);
            } else {
                if let Some(done) = current.take() {
                    pieces.push(done);
                }
                if k == 0 && t0 <= T_EPS {
                    starts_at_origin = true;
                }
                current = Some((arc + t0 * len, vec![a.lerp(b, t0), p1]));
            }
            reaches_end = t1 >= 1.0 - T_EPS;
        }
        if ivs.is_empty() {
            if let Some(done) = current.take() {
                pieces.push(done);
            }
        }
        arc += len;
    }
    if let Some(done) = current.take() {
        pieces.push(done);
    }

    let mut whole_ring = false;
    if poly.is_closed() && reaches_end && starts_at_origin {
        if pieces.len() == 1 {
            whole_ring = true;
        } else {
            let (_, head) = pieces.remove(0);
            let tail = pieces.last_mut().unwrap();
            tail.1.extend(head.into_iter().skip(1));
        }
    }

    pieces
        .into_iter()
        .filter_map(|(start, pts)| {
            let polyline = if whole_ring {
                Polyline::new_dedup(pts, true).ok()?
            } else {
                Polyline::new_dedup(pts, false).ok()?
            };
            (polyline.length() >= min_length).then(|| ArcPiece {
                start_arc: if whole_ring { 0.0 } else { start.clamp(0.0, arc) },
                polyline,
            })
        })
        .collect()
}
