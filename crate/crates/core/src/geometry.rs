//! Points, pixels and the workspace-to-image projection.

use serde::{Deserialize, Serialize};

/// Side length of the normalized image frame. Pixel coordinates live in `[0, IMAGE_SCALE]`.
pub const IMAGE_SCALE: i32 = 1000;

/// A point in workspace meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// An integer point in the normalized `[0, 1000]²` image frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Pixel {
    pub x: i32,
    pub y: i32,
}

impl Pixel {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn in_frame(self) -> bool {
        (0..=IMAGE_SCALE).contains(&self.x) && (0..=IMAGE_SCALE).contains(&self.y)
    }

    pub fn distance(self, other: Pixel) -> f64 {
        f64::from(self.x - other.x).hypot(f64::from(self.y - other.y))
    }

    pub fn as_f64(self) -> (f64, f64) {
        (f64::from(self.x), f64::from(self.y))
    }

    /// Rounds a real-valued image point to the nearest pixel, clamped into the frame.
    pub fn round_from(x: f64, y: f64) -> Self {
        let clamp = |v: f64| (v.round() as i32).clamp(0, IMAGE_SCALE);
        Self::new(clamp(x), clamp(y))
    }
}

impl From<[i32; 2]> for Pixel {
    fn from([x, y]: [i32; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Pixel> for [i32; 2] {
    fn from(p: Pixel) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned workspace rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: Point2,
    pub max: Point2,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            min: Point2::new(0.0, 0.0),
            max: Point2::new(1.0, 1.0),
        }
    }
}

impl Workspace {
    pub fn is_valid(&self) -> bool {
        self.min.x.is_finite()
            && self.min.y.is_finite()
            && self.max.x.is_finite()
            && self.max.y.is_finite()
            && self.max.x > self.min.x
            && self.max.y > self.min.y
    }

    pub fn contains(&self, p: Point2) -> bool {
        (self.min.x..=self.max.x).contains(&p.x) && (self.min.y..=self.max.y).contains(&p.y)
    }

    pub fn clamp(&self, p: Point2) -> Point2 {
        Point2::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
        )
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
        )
    }

    pub fn projection(&self) -> PixelProjection {
        PixelProjection { workspace: *self }
    }
}

/// Per-axis affine map between workspace meters and the `[0, 1000]²` image frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelProjection {
    pub workspace: Workspace,
}

impl Default for PixelProjection {
    fn default() -> Self {
        Workspace::default().projection()
    }
}

impl PixelProjection {
    fn extent(&self) -> (f64, f64) {
        let ws = &self.workspace;
        (ws.max.x - ws.min.x, ws.max.y - ws.min.y)
    }

    /// Real-valued image coordinates, before rounding.
    pub fn to_image(&self, p: Point2) -> (f64, f64) {
        let (w, h) = self.extent();
        let scale = f64::from(IMAGE_SCALE);
        (
            (p.x - self.workspace.min.x) / w * scale,
            (p.y - self.workspace.min.y) / h * scale,
        )
    }

    pub fn to_pixel(&self, p: Point2) -> Pixel {
        let (x, y) = self.to_image(p);
        Pixel::round_from(x, y)
    }

    pub fn to_meters(&self, px: Pixel) -> Point2 {
        let (w, h) = self.extent();
        let scale = f64::from(IMAGE_SCALE);
        Point2::new(
            self.workspace.min.x + f64::from(px.x) / scale * w,
            self.workspace.min.y + f64::from(px.y) / scale * h,
        )
    }

    /// Meters per pixel along each axis.
    pub fn meters_per_pixel(&self) -> (f64, f64) {
        let (w, h) = self.extent();
        let scale = f64::from(IMAGE_SCALE);
        (w / scale, h / scale)
    }

    /// Converts a length in meters to pixels using the finer of the two axes.
    pub fn length_to_pixels(&self, meters: f64) -> f64 {
        let (mx, my) = self.meters_per_pixel();
        meters / mx.max(my)
    }
}

/// Cumulative arc length at every vertex of a polyline; first entry is 0.
pub fn cumulative_arc_length(points: &[(f64, f64)]) -> Vec<f64> {
    let mut acc = Vec::with_capacity(points.len());
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            let q = points[i - 1];
            total += (p.0 - q.0).hypot(p.1 - q.1);
        }
        acc.push(total);
    }
    acc
}

/// Resamples a polyline to `count` points equally spaced in arc length.
///
/// The first and last output points are copies of the first and last input
/// points. A zero-length polyline yields `count` copies of its first point.
/// Returns an empty vector when `points` is empty or `count` is zero.
pub fn resample_polyline(points: &[(f64, f64)], count: usize) -> Vec<(f64, f64)> {
    let (Some(&first), Some(&last)) = (points.first(), points.last()) else {
        return Vec::new();
    };
    match count {
        0 => return Vec::new(),
        1 => return vec![first],
        _ => {}
    }
    let arc = cumulative_arc_length(points);
    let total = *arc.last().unwrap_or(&0.0);
    if total <= 0.0 {
        return vec![first; count];
    }

    let mut out = Vec::with_capacity(count);
    out.push(first);
    let mut seg = 0;
    for i in 1..count - 1 {
        let target = total * i as f64 / (count - 1) as f64;
        while seg + 2 < points.len() && arc[seg + 1] < target {
            seg += 1;
        }
        let (a, b) = (points[seg], points[seg + 1]);
        let len = arc[seg + 1] - arc[seg];
        let t = if len > 0.0 {
            ((target - arc[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
    }
    out.push(last);
    out
}

/// The part of a polyline between arc lengths `from` and `to`, with
/// interpolated end points where the bounds fall inside a segment.
pub fn slice_polyline(points: &[(f64, f64)], from: f64, to: f64) -> Vec<(f64, f64)> {
    let arc = cumulative_arc_length(points);
    let at = |s: f64| -> (f64, f64) {
        let i = arc.partition_point(|&a| a < s).clamp(1, points.len() - 1);
        let (a, b) = (points[i - 1], points[i]);
        let len = arc[i] - arc[i - 1];
        let t = if len > 0.0 { ((s - arc[i - 1]) / len).clamp(0.0, 1.0) } else { 0.0 };
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    };
    let Some(&total) = arc.last() else {
        return Vec::new();
    };
    if points.len() == 1 {
        return points.to_vec();
    }
    let (from, to) = (from.clamp(0.0, total), to.clamp(0.0, total));
    let mut out = vec![at(from)];
    for (i, &p) in points.iter().enumerate() {
        if arc[i] > from && arc[i] < to {
            out.push(p);
        }
    }
    if to > from {
        out.push(at(to));
    }
    out
}

/// The part of a polyline between arc length 0 and `until`.
pub fn truncate_polyline(points: &[(f64, f64)], until: f64) -> Vec<(f64, f64)> {
    slice_polyline(points, 0.0, until)
}

/// Closest point on a polyline to `q`, reported as arc length along the polyline
/// and the distance to it. Ties resolve to the smallest arc length.
pub fn project_onto_polyline(points: &[(f64, f64)], q: (f64, f64)) -> Option<(f64, f64)> {
    let first = *points.first()?;
    let arc = cumulative_arc_length(points);
    let mut best = (0.0, (q.0 - first.0).hypot(q.1 - first.1));
    for (i, w) in points.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((q.0 - a.0) * dx + (q.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (a.0 + t * dx, a.1 + t * dy);
        let d = (q.0 - px).hypot(q.1 - py);
        if d < best.1 {
            best = (arc[i] + t * len2.sqrt(), d);
        }
    }
    Some(best)
}

/// Smallest arc length at which the polyline comes within `radius` of `q`.
pub fn first_within(points: &[(f64, f64)], q: (f64, f64), radius: f64) -> Option<f64> {
    let first = *points.first()?;
    if (q.0 - first.0).hypot(q.1 - first.1) <= radius {
        return Some(0.0);
    }
    let arc = cumulative_arc_length(points);
    for (i, w) in points.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let (fx, fy) = (a.0 - q.0, a.1 - q.1);
        let qa = dx * dx + dy * dy;
        if qa == 0.0 {
            continue;
        }
        // |a + t(b - a) - q|² = r², smallest root in [0, 1]
        let qb = 2.0 * (fx * dx + fy * dy);
        let qc = fx * fx + fy * fy - radius * radius;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            continue;
        }
        let t = if qc <= 0.0 { 0.0 } else { (-qb - disc.sqrt()) / (2.0 * qa) };
        if (0.0..=1.0).contains(&t) {
            return Some(arc[i] + t * qa.sqrt());
        }
    }
    None
}
