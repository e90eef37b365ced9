//! Top-down SVG rendering of global maps.

use std::fmt::Write as _;

use crate::geometry::Point2;
use crate::map_model::{Category, VectorMap};
use crate::rasterizer::TracedRegion;

pub fn category_color(category: Category) -> &'static str {
    match category {
        Category::RoadBoundary => "#d62728",
        Category::LaneDivider => "#1f77b4",
        Category::PedCrossing => "#2ca02c",
        Category::TracedRegion => "#ff7f0e",
    }
}

const GT_COLOR: &str = "#b0b0b0";
const MARGIN: f64 = 5.0;
const LEGEND_HEIGHT: f64 = 18.0;

/// Drawing scale in pixels per metre.
const SCALE: f64 = 4.0;

struct Canvas {
    min: Point2,
    max: Point2,
}

impl Canvas {
    fn x(&self, p: Point2) -> f64 {
        (p.x - self.min.x + MARGIN) * SCALE
    }

    fn y(&self, p: Point2) -> f64 {
        (self.max.y - p.y + MARGIN) * SCALE + LEGEND_HEIGHT
    }

    fn width(&self) -> f64 {
        (self.max.x - self.min.x + 2.0 * MARGIN) * SCALE
    }

    fn height(&self) -> f64 {
        (self.max.y - self.min.y + 2.0 * MARGIN) * SCALE + LEGEND_HEIGHT
    }

    fn path(&self, pts: &[Point2], closed: bool) -> String {
        let mut d = String::new();
        for (i, &p) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, self.x(p), self.y(p));
        }
        if closed {
            d.push_str(" Z");
        }
        d
    }
}

fn extend(bounds: &mut Option<(Point2, Point2)>, p: Point2) {
    let (lo, hi) = bounds.get_or_insert((p, p));
    *lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
    *hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
}

fn footprint_corners(region: &TracedRegion) -> Vec<[Point2; 4]> {
    region
        .footprints()
        .iter()
        .map(|f| {
            let (lo, hi) = f.window.corners();
            [
                f.pose.ego_to_global(lo),
                f.pose.ego_to_global(Point2::new(hi.x, lo.y)),
                f.pose.ego_to_global(hi),
                f.pose.ego_to_global(Point2::new(lo.x, hi.y)),
            ]
        })
        .collect()
}

/// Renders `maps` (drawn in order, later on top) with an optional gray
/// ground-truth underlay and translucent traced region.
pub fn render_svg(maps: &[&VectorMap], gt: Option<&VectorMap>, traced: Option<&TracedRegion>) -> String {
    let quads = traced.map(footprint_corners).unwrap_or_default();
    let mut bounds = None;
    for m in maps.iter().copied().chain(gt) {
        for e in m.elements() {
            for &p in e.geometry.points() {
                extend(&mut bounds, p);
            }
        }
    }
    for q in &quads {
        for &p in q {
            extend(&mut bounds, p);
        }
    }
    let (min, max) = bounds.unwrap_or((Point2::new(0.0, 0.0), Point2::new(40.0, 10.0)));
    let canvas = Canvas { min, max };

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#,
        w = canvas.width(),
        h = canvas.height()
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);

    if !quads.is_empty() {
        let _ = writeln!(s, r#"<g id="traced" fill="{}" fill-opacity="0.12" stroke="none">"#, category_color(Category::TracedRegion));
        for q in &quads {
            let _ = writeln!(s, r#"<path d="{}"/>"#, canvas.path(q, true));
        }
        s.push_str("</g>\n");
    }
    if let Some(gt) = gt {
        let _ = writeln!(s, r#"<g id="gt" fill="none" stroke="{GT_COLOR}" stroke-width="3" stroke-linejoin="round">"#);
        for e in gt.elements() {
            let _ = writeln!(s, r#"<path d="{}"/>"#, canvas.path(e.geometry.points(), e.geometry.is_closed()));
        }
        s.push_str("</g>\n");
    }
    for (k, m) in maps.iter().enumerate() {
        let _ = writeln!(s, r#"<g id="map{k}" fill="none" stroke-width="1.5" stroke-linejoin="round">"#);
        for e in m.elements() {
            let _ = writeln!(
                s,
                r#"<path stroke="{}" d="{}"/>"#,
                category_color(e.category),
                canvas.path(e.geometry.points(), e.geometry.is_closed())
            );
        }
        s.push_str("</g>\n");
    }

    s.push_str("<g id=\"legend\" font-family=\"sans-serif\" font-size=\"11\">\n");
    for (i, c) in Category::ELEMENTS.into_iter().enumerate() {
        let x = 8.0 + 120.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.0}" y1="9" x2="{:.0}" y2="9" stroke="{}" stroke-width="3"/><text x="{:.0}" y="13">{}</text>"#,
            x + 16.0,
            category_color(c),
            x + 20.0,
            c.name()
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}
