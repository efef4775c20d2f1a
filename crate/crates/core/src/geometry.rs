//! Polygonal observation windows.
//!
//! Windows are sets of closed rings: counterclockwise rings bound filled
//! regions and clockwise rings bound holes, so the signed ring areas add up
//! to the window area. Convex single-ring windows (the common case for
//! hull-based windows) are clipped and eroded with exact half-plane
//! clipping; general windows go through `geo`'s boolean and buffer ops.

use std::convert::TryFrom;

use geo::{BooleanOps, Buffer, Coord, LineString, MultiPolygon, Polygon};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Absolute tolerance, in window units, for on-boundary tests.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;
/// Pieces smaller than this fraction of the reference area are discarded.
pub const SLIVER_FRACTION: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn distance_sq(&self, other: &Self) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn distance(&self, other: &Self) -> T {
        self.distance_sq(other).sqrt()
    }
}

/// Twice the signed area of the triangle `(a, b, c)`; positive when counterclockwise.
#[inline]
fn cross<T: Scalar>(a: &Point2<T>, b: &Point2<T>, c: &Point2<T>) -> T {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

pub(crate) fn ring_signed_area<T: Scalar>(ring: &[Point2<T>]) -> T {
    let n = ring.len();
    if n < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for k in 0..n {
        let p = &ring[k];
        let q = &ring[(k + 1) % n];
        acc += p.x * q.y - q.x * p.y;
    }
    acc * T::lit(0.5)
}

/// Signed area and area-weighted centroid numerator of a ring.
fn ring_moments<T: Scalar>(ring: &[Point2<T>]) -> (T, T, T) {
    let n = ring.len();
    let (mut a, mut cx, mut cy) = (T::zero(), T::zero(), T::zero());
    if n < 3 {
        return (a, cx, cy);
    }
    for k in 0..n {
        let p = &ring[k];
        let q = &ring[(k + 1) % n];
        let f = p.x * q.y - q.x * p.y;
        a += f;
        cx += (p.x + q.x) * f;
        cy += (p.y + q.y) * f;
    }
    let six = T::lit(6.0);
    (a * T::lit(0.5), cx / six, cy / six)
}

fn distance_to_segment<T: Scalar>(p: &Point2<T>, a: &Point2<T>, b: &Point2<T>) -> T {
    let vx = b.x - a.x;
    let vy = b.y - a.y;
    let len2 = vx * vx + vy * vy;
    if len2 <= T::zero() {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2)
        .max(T::zero())
        .min(T::one());
    let q = Point2::new(a.x + t * vx, a.y + t * vy);
    p.distance(&q)
}

fn segments_cross<T: Scalar>(a: &Point2<T>, b: &Point2<T>, c: &Point2<T>, d: &Point2<T>) -> bool {
    let d1 = cross(a, b, c);
    let d2 = cross(a, b, d);
    let d3 = cross(c, d, a);
    let d4 = cross(c, d, b);
    ((d1 > T::zero() && d2 < T::zero()) || (d1 < T::zero() && d2 > T::zero()))
        && ((d3 > T::zero() && d4 < T::zero()) || (d3 < T::zero() && d4 > T::zero()))
}

fn ring_is_simple<T: Scalar>(ring: &[Point2<T>]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let a = &ring[i];
        let b = &ring[(i + 1) % n];
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let c = &ring[j];
            let d = &ring[(j + 1) % n];
            if segments_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Drops repeated and collinear vertices.
fn simplify_ring<T: Scalar>(ring: Vec<Point2<T>>, scale: T) -> Vec<Point2<T>> {
    let eps = T::lit(1e-12) * scale * scale;
    let tol = T::lit(BOUNDARY_TOLERANCE) * T::lit(1e-3);
    let mut pts: Vec<Point2<T>> = Vec::with_capacity(ring.len());
    for p in ring {
        if pts.last().map_or(true, |q: &Point2<T>| q.distance(&p) > tol) {
            pts.push(p);
        }
    }
    while pts.len() > 1 && pts[0].distance(&pts[pts.len() - 1]) <= tol {
        pts.pop();
    }
    let mut changed = true;
    while changed && pts.len() >= 3 {
        changed = false;
        let n = pts.len();
        for k in 0..n {
            let prev = pts[(k + n - 1) % n];
            let next = pts[(k + 1) % n];
            if cross(&prev, &pts[k], &next).abs() <= eps {
                pts.remove(k);
                changed = true;
                break;
            }
        }
    }
    pts
}

/// Keeps the part of `poly` where `nx * x + ny * y >= c`.
fn clip_half_plane<T: Scalar>(poly: &[Point2<T>], nx: T, ny: T, c: T) -> Vec<Point2<T>> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 4);
    if n == 0 {
        return out;
    }
    for k in 0..n {
        let cur = poly[k];
        let prev = poly[(k + n - 1) % n];
        let fc = nx * cur.x + ny * cur.y - c;
        let fp = nx * prev.x + ny * prev.y - c;
        let cur_in = fc >= T::zero();
        let prev_in = fp >= T::zero();
        if cur_in != prev_in {
            let t = fp / (fp - fc);
            out.push(Point2::new(
                prev.x + t * (cur.x - prev.x),
                prev.y + t * (cur.y - prev.y),
            ));
        }
        if cur_in {
            out.push(cur);
        }
    }
    out
}

fn clip_rect<T: Scalar>(ring: &[Point2<T>], x0: T, y0: T, x1: T, y1: T) -> Vec<Point2<T>> {
    let one = T::one();
    let zero = T::zero();
    let r = clip_half_plane(ring, one, zero, x0);
    let r = clip_half_plane(&r, -one, zero, -x1);
    let r = clip_half_plane(&r, zero, one, y0);
    clip_half_plane(&r, zero, -one, -y1)
}

/// A polygonal observation region, possibly with holes or several components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "WindowRepr<T>",
    into = "WindowRepr<T>",
    bound = "T: Scalar"
)]
pub struct PolygonalWindow<T> {
    rings: Vec<Vec<Point2<T>>>,
    area: T,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct WindowRepr<T> {
    rings: Vec<Vec<[T; 2]>>,
    area: T,
}

impl<T: Scalar> From<PolygonalWindow<T>> for WindowRepr<T> {
    fn from(w: PolygonalWindow<T>) -> Self {
        WindowRepr {
            rings: w
                .rings
                .iter()
                .map(|r| r.iter().map(|p| [p.x, p.y]).collect())
                .collect(),
            area: w.area,
        }
    }
}

impl<T: Scalar> TryFrom<WindowRepr<T>> for PolygonalWindow<T> {
    type Error = Error;

    fn try_from(repr: WindowRepr<T>) -> Result<Self> {
        let rings = repr
            .rings
            .into_iter()
            .map(|r| r.into_iter().map(|[x, y]| Point2::new(x, y)).collect())
            .collect();
        PolygonalWindow::from_rings(rings)
    }
}

impl<T: Scalar> PolygonalWindow<T> {
    /// Builds a window from explicit rings, validating the invariants.
    ///
    /// A single ring may be given in either orientation; it is stored
    /// counterclockwise. With several rings the orientation carries meaning
    /// (counterclockwise = filled, clockwise = hole) and is kept as given.
    pub fn from_rings(mut rings: Vec<Vec<Point2<T>>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::DegenerateGeometry("window has no rings".into()));
        }
        for ring in &rings {
            if ring.len() < 3 {
                return Err(Error::DegenerateGeometry(format!(
                    "ring with {} vertices",
                    ring.len()
                )));
            }
            if ring.iter().any(|p| !p.is_finite()) {
                return Err(Error::DegenerateGeometry("non-finite vertex".into()));
            }
            if !ring_is_simple(ring) {
                return Err(Error::DegenerateGeometry("self-intersecting ring".into()));
            }
        }
        if rings.len() == 1 && ring_signed_area(&rings[0]) < T::zero() {
            rings[0].reverse();
        }
        let area: T = rings.iter().map(|r| ring_signed_area(r)).sum();
        if !(area > T::zero()) {
            return Err(Error::DegenerateGeometry(format!(
                "window area {area} is not positive"
            )));
        }
        Ok(Self { rings, area })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rectangle(x0: T, y0: T, x1: T, y1: T) -> Result<Self> {
        Self::from_rings(vec![vec![
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ]])
    }

    pub fn unit_square() -> Self {
        Self::rectangle(T::zero(), T::zero(), T::one(), T::one()).expect("unit square")
    }

    pub fn rings(&self) -> &[Vec<Point2<T>>] {
        &self.rings
    }

    pub fn area(&self) -> T {
        self.area
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Point2<T>> {
        self.rings.iter().flatten()
    }

    /// Lower-left and upper-right corners of the bounding box.
    pub fn bounding_box(&self) -> (Point2<T>, Point2<T>) {
        let mut lo = Point2::new(T::infinity(), T::infinity());
        let mut hi = Point2::new(T::neg_infinity(), T::neg_infinity());
        for p in self.vertices() {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Largest distance between two vertices.
    pub fn diameter(&self) -> T {
        let v: Vec<_> = self.vertices().copied().collect();
        let mut best = T::zero();
        for i in 0..v.len() {
            for j in (i + 1)..v.len() {
                best = best.max(v[i].distance_sq(&v[j]));
            }
        }
        best.sqrt()
    }

    pub fn centroid(&self) -> Point2<T> {
        let (mut a, mut cx, mut cy) = (T::zero(), T::zero(), T::zero());
        for r in &self.rings {
            let (ra, rx, ry) = ring_moments(r);
            a += ra;
            cx += rx;
            cy += ry;
        }
        Point2::new(cx / a, cy / a)
    }

    pub fn is_convex(&self) -> bool {
        if self.rings.len() != 1 {
            return false;
        }
        let r = &self.rings[0];
        let n = r.len();
        (0..n).all(|k| cross(&r[k], &r[(k + 1) % n], &r[(k + 2) % n]) >= T::zero())
    }

    /// `true` for an axis-aligned rectangle.
    pub fn as_rectangle(&self) -> Option<(Point2<T>, Point2<T>)> {
        if self.rings.len() != 1 || self.rings[0].len() != 4 {
            return None;
        }
        let (lo, hi) = self.bounding_box();
        let tol = T::lit(BOUNDARY_TOLERANCE);
        let on_corner = |p: &Point2<T>| {
            ((p.x - lo.x).abs() <= tol || (p.x - hi.x).abs() <= tol)
                && ((p.y - lo.y).abs() <= tol || (p.y - hi.y).abs() <= tol)
        };
        if self.rings[0].iter().all(on_corner) {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// Distance from `p` to the nearest boundary edge.
    pub fn boundary_distance(&self, p: &Point2<T>) -> T {
        let mut best = T::infinity();
        for r in &self.rings {
            let n = r.len();
            for k in 0..n {
                best = best.min(distance_to_segment(p, &r[k], &r[(k + 1) % n]));
            }
        }
        best
    }

    /// Membership test; boundary points (within [`BOUNDARY_TOLERANCE`]) count as inside.
    pub fn contains(&self, p: &Point2<T>) -> bool {
        if let Some((lo, hi)) = self.as_rectangle() {
            let tol = T::lit(BOUNDARY_TOLERANCE);
            return p.x >= lo.x - tol && p.x <= hi.x + tol && p.y >= lo.y - tol && p.y <= hi.y + tol;
        }
        let mut inside = false;
        for r in &self.rings {
            let n = r.len();
            let mut j = n - 1;
            for i in 0..n {
                let (a, b) = (&r[i], &r[j]);
                if (a.y > p.y) != (b.y > p.y) {
                    let xi = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                    if p.x < xi {
                        inside = !inside;
                    }
                }
                j = i;
            }
        }
        inside || self.boundary_distance(p) <= T::lit(BOUNDARY_TOLERANCE)
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        let rings = self
            .rings
            .iter()
            .map(|r| r.iter().map(|p| Point2::new(p.x + dx, p.y + dy)).collect())
            .collect();
        Self {
            rings,
            area: self.area,
        }
    }

    /// Uniform scaling about `center`.
    pub fn scale_about(&self, center: &Point2<T>, factor: T) -> Self {
        let rings = self
            .rings
            .iter()
            .map(|r| {
                r.iter()
                    .map(|p| {
                        Point2::new(
                            center.x + (p.x - center.x) * factor,
                            center.y + (p.y - center.y) * factor,
                        )
                    })
                    .collect()
            })
            .collect();
        Self {
            rings,
            area: self.area * factor * factor,
        }
    }

    /// Area of `self ∩ (self + (dx, dy))`, the translation edge-correction denominator.
    pub fn translated_overlap_area(&self, dx: T, dy: T) -> T {
        if let Some((lo, hi)) = self.as_rectangle() {
            let w = (hi.x - lo.x - dx.abs()).max(T::zero());
            let h = (hi.y - lo.y - dy.abs()).max(T::zero());
            return w * h;
        }
        let shifted = self.translate(dx, dy);
        if self.is_convex() {
            let piece = convex_clip(&self.rings[0], &shifted.rings[0]);
            return ring_signed_area(&piece).max(T::zero());
        }
        match boolean_intersection(&[self.clone(), shifted]) {
            Ok(w) => w.area,
            Err(_) => T::zero(),
        }
    }

    fn to_geo(&self) -> MultiPolygon<f64> {
        let conv = |r: &Vec<Point2<T>>| -> LineString<f64> {
            LineString::from(
                r.iter()
                    .map(|p| Coord {
                        x: p.x.as_f64(),
                        y: p.y.as_f64(),
                    })
                    .collect::<Vec<_>>(),
            )
        };
        let mut exteriors: Vec<(Vec<Point2<T>>, Vec<LineString<f64>>)> = Vec::new();
        let mut holes = Vec::new();
        for r in &self.rings {
            if ring_signed_area(r) >= T::zero() {
                exteriors.push((r.clone(), Vec::new()));
            } else {
                holes.push(r);
            }
        }
        for h in holes {
            let probe = h[0];
            let owner = exteriors.iter_mut().find(|(ext, _)| {
                PolygonalWindow {
                    rings: vec![ext.clone()],
                    area: T::one(),
                }
                .contains(&probe)
            });
            if let Some((_, list)) = owner {
                list.push(conv(h));
            }
        }
        MultiPolygon::new(
            exteriors
                .into_iter()
                .map(|(ext, hs)| Polygon::new(conv(&ext), hs))
                .collect(),
        )
    }

    fn from_geo(mp: &MultiPolygon<f64>, reference_area: T) -> Result<Self> {
        let to_ring = |ls: &LineString<f64>, ccw: bool| -> Vec<Point2<T>> {
            let mut pts: Vec<Point2<T>> = ls
                .coords()
                .map(|c| Point2::new(T::lit(c.x), T::lit(c.y)))
                .collect();
            if pts.len() > 1 && pts.first() == pts.last() {
                pts.pop();
            }
            let positive = ring_signed_area(&pts) >= T::zero();
            if positive != ccw {
                pts.reverse();
            }
            pts
        };
        let scale = reference_area.sqrt();
        let min_area = T::lit(SLIVER_FRACTION) * reference_area;
        let mut rings = Vec::new();
        for poly in mp.iter() {
            let ext = simplify_ring(to_ring(poly.exterior(), true), scale);
            if ext.len() < 3 || ring_signed_area(&ext) <= min_area {
                continue;
            }
            rings.push(ext);
            for hole in poly.interiors() {
                let h = simplify_ring(to_ring(hole, false), scale);
                if h.len() >= 3 && -ring_signed_area(&h) > min_area {
                    rings.push(h);
                }
            }
        }
        let area: T = rings.iter().map(|r| ring_signed_area(r)).sum();
        if rings.is_empty() || area <= min_area {
            return Err(Error::EmptyWindow("region has no area".into()));
        }
        Ok(Self { rings, area })
    }
}

/// Intersection of two convex counterclockwise rings.
fn convex_clip<T: Scalar>(subject: &[Point2<T>], clip: &[Point2<T>]) -> Vec<Point2<T>> {
    let n = clip.len();
    let mut out = subject.to_vec();
    for k in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[k];
        let b = clip[(k + 1) % n];
        // Left of a->b: (-(b.y-a.y)) x + (b.x-a.x) y >= ...
        let nx = -(b.y - a.y);
        let ny = b.x - a.x;
        out = clip_half_plane(&out, nx, ny, nx * a.x + ny * a.y);
    }
    out
}

fn boolean_intersection<T: Scalar>(windows: &[PolygonalWindow<T>]) -> Result<PolygonalWindow<T>> {
    let min_area = windows
        .iter()
        .map(|w| w.area)
        .fold(T::infinity(), |a, b| a.min(b));
    let mut acc = windows[0].to_geo();
    for w in &windows[1..] {
        acc = acc.intersection(&w.to_geo());
    }
    PolygonalWindow::from_geo(&acc, min_area)
        .map_err(|_| Error::EmptyWindow("windows do not overlap".into()))
}

/// Smallest convex polygon containing every point.
pub fn convex_hull<T: Scalar>(points: &[Point2<T>]) -> Result<PolygonalWindow<T>> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::DegenerateGeometry("non-finite point".into()));
    }
    let mut pts: Vec<Point2<T>> = points.to_vec();
    pts.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap()
            .then(a.y.partial_cmp(&b.y).unwrap())
    });
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "hull needs 3 distinct points, got {}",
            pts.len()
        )));
    }
    let mut hull: Vec<Point2<T>> = Vec::with_capacity(2 * pts.len());
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= T::zero() {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= T::zero() {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    if hull.len() < 3 || ring_signed_area(&hull) <= T::zero() {
        return Err(Error::DegenerateGeometry("points are collinear".into()));
    }
    Ok(PolygonalWindow {
        area: ring_signed_area(&hull),
        rings: vec![hull],
    })
}

/// Dilation factor `1 / sqrt(1 - hull_vertices / points)`.
pub fn ripley_rasson_factor<T: Scalar>(points: usize, hull_vertices: usize) -> Result<T> {
    if points <= hull_vertices {
        return Err(Error::CannotDilate {
            points,
            hull_vertices,
        });
    }
    let ratio = T::from_usize_lossy(hull_vertices) / T::from_usize_lossy(points);
    Ok(T::one() / (T::one() - ratio).sqrt())
}

/// Convex hull of the points dilated about its centroid by the Ripley–Rasson factor.
pub fn ripley_rasson_window<T: Scalar>(points: &[Point2<T>]) -> Result<PolygonalWindow<T>> {
    let hull = convex_hull(points)?;
    let factor = ripley_rasson_factor::<T>(points.len(), hull.rings[0].len())?;
    let c = hull.centroid();
    Ok(hull.scale_about(&c, factor))
}

/// Set intersection of all windows.
pub fn intersect_windows<T: Scalar>(windows: &[PolygonalWindow<T>]) -> Result<PolygonalWindow<T>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InvalidArgument("no windows to intersect".into()))?;
    if windows.iter().all(|w| w == first) {
        return Ok(first.clone());
    }
    if windows.iter().all(|w| w.is_convex()) {
        let mut acc = first.rings[0].clone();
        for w in &windows[1..] {
            acc = convex_clip(&acc, &w.rings[0]);
        }
        let min_area = windows
            .iter()
            .map(|w| w.area)
            .fold(T::infinity(), |a, b| a.min(b));
        let ring = simplify_ring(acc, min_area.sqrt());
        let area = ring_signed_area(&ring);
        if ring.len() < 3 || area <= T::lit(SLIVER_FRACTION) * min_area {
            return Err(Error::EmptyWindow("windows do not overlap".into()));
        }
        return Ok(PolygonalWindow {
            rings: vec![ring],
            area,
        });
    }
    boolean_intersection(windows)
}

/// Points of the window at distance at least `margin` from its boundary.
pub fn erode_border<T: Scalar>(window: &PolygonalWindow<T>, margin: T) -> Result<PolygonalWindow<T>> {
    if !(margin >= T::zero()) {
        return Err(Error::InvalidArgument(format!("negative margin {margin}")));
    }
    if margin == T::zero() {
        return Ok(window.clone());
    }
    let empty = || Error::EmptyWindow(format!("erosion by {margin} empties the window"));
    if window.is_convex() {
        let ring = &window.rings[0];
        let n = ring.len();
        let mut acc = ring.clone();
        for k in 0..n {
            let a = ring[k];
            let b = ring[(k + 1) % n];
            let len = a.distance(&b);
            let nx = -(b.y - a.y) / len;
            let ny = (b.x - a.x) / len;
            acc = clip_half_plane(&acc, nx, ny, nx * a.x + ny * a.y + margin);
            if acc.is_empty() {
                return Err(empty());
            }
        }
        let ring = simplify_ring(acc, window.area.sqrt());
        let area = ring_signed_area(&ring);
        if ring.len() < 3 || area <= T::lit(SLIVER_FRACTION) * window.area {
            return Err(empty());
        }
        return Ok(PolygonalWindow {
            rings: vec![ring],
            area,
        });
    }
    let eroded = window.to_geo().buffer(-margin.as_f64());
    PolygonalWindow::from_geo(&eroded, window.area).map_err(|_| empty())
}

/// Axis-aligned grid over a window's bounding box with per-cell clipped areas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TileGrid<T> {
    window: PolygonalWindow<T>,
    nx: usize,
    ny: usize,
    origin: Point2<T>,
    dx: T,
    dy: T,
    areas: Vec<T>,
    centroids: Vec<Point2<T>>,
}

/// Partitions the window's bounding box into `nx * ny` equal cells.
pub fn tile_grid<T: Scalar>(window: &PolygonalWindow<T>, nx: usize, ny: usize) -> Result<TileGrid<T>> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!("grid {nx}x{ny}")));
    }
    let (lo, hi) = window.bounding_box();
    let dx = (hi.x - lo.x) / T::from_usize_lossy(nx);
    let dy = (hi.y - lo.y) / T::from_usize_lossy(ny);
    let mut areas = vec![T::zero(); nx * ny];
    let mut mx = vec![T::zero(); nx * ny];
    let mut my = vec![T::zero(); nx * ny];
    for ring in &window.rings {
        // Only visit the cells overlapping this ring's bounding box.
        let (mut rlo, mut rhi) = (ring[0], ring[0]);
        for p in ring {
            rlo.x = rlo.x.min(p.x);
            rlo.y = rlo.y.min(p.y);
            rhi.x = rhi.x.max(p.x);
            rhi.y = rhi.y.max(p.y);
        }
        let cell = |v: T, o: T, d: T, n: usize| -> usize {
            ((v - o) / d).floor().to_usize().unwrap_or(0).min(n - 1)
        };
        let (i0, i1) = (cell(rlo.x, lo.x, dx, nx), cell(rhi.x, lo.x, dx, nx));
        let (j0, j1) = (cell(rlo.y, lo.y, dy, ny), cell(rhi.y, lo.y, dy, ny));
        for j in j0..=j1 {
            for i in i0..=i1 {
                let x0 = lo.x + dx * T::from_usize_lossy(i);
                let y0 = lo.y + dy * T::from_usize_lossy(j);
                let x1 = if i + 1 == nx { hi.x } else { x0 + dx };
                let y1 = if j + 1 == ny { hi.y } else { y0 + dy };
                let piece = clip_rect(ring, x0, y0, x1, y1);
                let (a, cx, cy) = ring_moments(&piece);
                let idx = j * nx + i;
                areas[idx] += a;
                mx[idx] += cx;
                my[idx] += cy;
            }
        }
    }
    let mut centroids = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let idx = j * nx + i;
            let center = Point2::new(
                lo.x + dx * (T::from_usize_lossy(i) + T::lit(0.5)),
                lo.y + dy * (T::from_usize_lossy(j) + T::lit(0.5)),
            );
            // Drop numerical dust left by clipping.
            if areas[idx] <= T::lit(SLIVER_FRACTION) * window.area * T::lit(1e-3) {
                areas[idx] = T::zero();
                centroids.push(center);
            } else if window.contains(&center) {
                centroids.push(center);
            } else {
                centroids.push(Point2::new(mx[idx] / areas[idx], my[idx] / areas[idx]));
            }
        }
    }
    Ok(TileGrid {
        window: window.clone(),
        nx,
        ny,
        origin: lo,
        dx,
        dy,
        areas,
        centroids,
    })
}

impl<T: Scalar> TileGrid<T> {
    pub fn window(&self) -> &PolygonalWindow<T> {
        &self.window
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_size(&self) -> (T, T) {
        (self.dx, self.dy)
    }

    pub fn origin(&self) -> Point2<T> {
        self.origin
    }

    /// Clipped area of every cell, row-major (`j * nx + i`).
    pub fn areas(&self) -> &[T] {
        &self.areas
    }

    pub fn area(&self, idx: usize) -> T {
        self.areas[idx]
    }

    pub fn total_area(&self) -> T {
        self.areas.iter().copied().sum()
    }

    /// Geometric center of the cell rectangle.
    pub fn cell_center(&self, idx: usize) -> Point2<T> {
        let (i, j) = (idx % self.nx, idx / self.nx);
        Point2::new(
            self.origin.x + self.dx * (T::from_usize_lossy(i) + T::lit(0.5)),
            self.origin.y + self.dy * (T::from_usize_lossy(j) + T::lit(0.5)),
        )
    }

    /// Representative point of the cell's part of the window: the cell
    /// center when it lies in the window, otherwise the clipped piece's centroid.
    pub fn representative_point(&self, idx: usize) -> Point2<T> {
        self.centroids[idx]
    }

    /// Cell containing `p`, clamping points within tolerance of the bounding box.
    pub fn cell_index(&self, p: &Point2<T>) -> Option<usize> {
        let tol = T::lit(BOUNDARY_TOLERANCE);
        let fx = (p.x - self.origin.x) / self.dx;
        let fy = (p.y - self.origin.y) / self.dy;
        let wx = T::from_usize_lossy(self.nx);
        let wy = T::from_usize_lossy(self.ny);
        if fx < -tol / self.dx || fy < -tol / self.dy || fx > wx + tol / self.dx || fy > wy + tol / self.dy {
            return None;
        }
        let i = fx.floor().max(T::zero()).to_usize()?.min(self.nx - 1);
        let j = fy.floor().max(T::zero()).to_usize()?.min(self.ny - 1);
        Some(j * self.nx + i)
    }

    /// Same as [`cell_index`](Self::cell_index) but clamps any point to the nearest cell.
    pub fn nearest_cell(&self, p: &Point2<T>) -> usize {
        let fx = ((p.x - self.origin.x) / self.dx).floor();
        let fy = ((p.y - self.origin.y) / self.dy).floor();
        let clamp = |v: T, n: usize| -> usize {
            if !(v > T::zero()) {
                0
            } else {
                v.to_usize().unwrap_or(n - 1).min(n - 1)
            }
        };
        clamp(fy, self.ny) * self.nx + clamp(fx, self.nx)
    }

    /// Whether two grids describe the same cells.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.origin == other.origin
            && self.dx == other.dx
            && self.dy == other.dy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sq(x0: f64, y0: f64, s: f64) -> PolygonalWindow<f64> {
        PolygonalWindow::rectangle(x0, y0, x0 + s, y0 + s).unwrap()
    }

    fn l_shape() -> PolygonalWindow<f64> {
        PolygonalWindow::from_rings(vec![vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 2.0),
            Point2::new(0.0, 2.0),
        ]])
        .unwrap()
    }

    #[test]
    fn hull_of_square_corners() {
        let pts = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
            Point2::new(0.5, 0.5),
        ];
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.rings()[0].len(), 4);
        assert_relative_eq!(h.area(), 1.0);
    }

    #[test]
    fn hull_rejects_collinear() {
        let pts: Vec<_> = (0..5).map(|k| Point2::new(k as f64, 2.0 * k as f64)).collect();
        assert!(matches!(convex_hull(&pts), Err(Error::DegenerateGeometry(_))));
        assert!(convex_hull::<f64>(&[Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)]).is_err());
    }

    #[test]
    fn hull_works_in_f32() {
        let pts = vec![
            Point2::new(0.0f32, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(0.0, 2.0),
            Point2::new(0.3, 0.3),
        ];
        assert_relative_eq!(convex_hull(&pts).unwrap().area(), 2.0f32);
    }

    #[test]
    fn ripley_rasson_factor_values() {
        assert_relative_eq!(ripley_rasson_factor::<f64>(100, 19).unwrap(), 1.0 / 0.9, epsilon = 1e-12);
        assert_relative_eq!(ripley_rasson_factor::<f64>(1_000_000_000, 4).unwrap(), 1.0, epsilon = 1e-8);
        assert!(matches!(
            ripley_rasson_factor::<f64>(4, 4),
            Err(Error::CannotDilate { points: 4, hull_vertices: 4 })
        ));
    }

    #[test]
    fn ripley_rasson_on_all_hull_points_fails() {
        let pts = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        assert!(matches!(ripley_rasson_window(&pts), Err(Error::CannotDilate { .. })));
    }

    #[test]
    fn intersection_examples() {
        let a = sq(0.0, 0.0, 1.0);
        assert_eq!(intersect_windows(&[a.clone(), a.clone()]).unwrap(), a);
        let b = sq(0.5, 0.0, 1.0);
        assert_relative_eq!(intersect_windows(&[a.clone(), b]).unwrap().area(), 0.5, epsilon = 1e-12);
        let far = sq(5.0, 5.0, 1.0);
        assert!(matches!(intersect_windows(&[a, far]), Err(Error::EmptyWindow(_))));
    }

    #[test]
    fn nonconvex_intersection_goes_through_boolean_ops() {
        let l = l_shape();
        let s = sq(0.5, 0.5, 1.0);
        // Overlap of [0.5,1.5]^2 with the L: full square minus the [1,1.5]^2 notch.
        let w = intersect_windows(&[l, s]).unwrap();
        assert_relative_eq!(w.area(), 0.75, epsilon = 1e-6);
    }

    #[test]
    fn erosion_examples() {
        let a = sq(0.0, 0.0, 1.0);
        assert_eq!(erode_border(&a, 0.0).unwrap(), a);
        assert_relative_eq!(erode_border(&a, 0.1).unwrap().area(), 0.64, epsilon = 1e-12);
        assert!(matches!(erode_border(&a, 0.6), Err(Error::EmptyWindow(_))));
    }

    #[test]
    fn nonconvex_erosion_rounds_reflex_corner() {
        let l = l_shape();
        let m = 0.1;
        let w = erode_border(&l, m).unwrap();
        // Eroded L: two 1.8-long arms of width 0.8 overlapping in a 0.8x0.8
        // block, plus the m x m square at the reflex corner minus the quarter
        // disc of radius m around that corner.
        let expected = 0.8 * 1.8 * 2.0 - 0.64 + (m * m - std::f64::consts::PI * m * m / 4.0);
        assert_relative_eq!(w.area(), expected, epsilon = 1e-3);
        assert!(w.contains(&Point2::new(0.5, 1.5)));
        assert!(!w.contains(&Point2::new(0.95, 0.95)));
        assert!(w.contains(&Point2::new(0.5, 0.5)));
    }

    #[test]
    fn tiles_of_unit_square() {
        let g = tile_grid(&PolygonalWindow::<f64>::unit_square(), 2, 2).unwrap();
        for a in g.areas() {
            assert_relative_eq!(*a, 0.25);
        }
        let g = tile_grid(&PolygonalWindow::<f64>::unit_square(), 1, 1).unwrap();
        assert_relative_eq!(g.area(0), 1.0);
        assert!(tile_grid(&PolygonalWindow::<f64>::unit_square(), 0, 3).is_err());
    }

    #[test]
    fn tiles_of_l_shape() {
        let g = tile_grid(&l_shape(), 2, 2).unwrap();
        assert_relative_eq!(g.areas()[0], 1.0);
        assert_relative_eq!(g.areas()[1], 1.0);
        assert_relative_eq!(g.areas()[2], 1.0);
        assert_relative_eq!(g.areas()[3], 0.0);
        assert_relative_eq!(g.total_area(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn window_with_hole_area_and_membership() {
        let outer = vec![
            Point2::new(0.0, 0.0),
            Point2::new(3.0, 0.0),
            Point2::new(3.0, 3.0),
            Point2::new(0.0, 3.0),
        ];
        let hole = vec![
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 2.0),
            Point2::new(2.0, 2.0),
            Point2::new(2.0, 1.0),
        ];
        let w = PolygonalWindow::from_rings(vec![outer, hole]).unwrap();
        assert_relative_eq!(w.area(), 8.0);
        assert!(!w.contains(&Point2::new(1.5, 1.5)));
        assert!(w.contains(&Point2::new(0.5, 1.5)));
        assert!(w.contains(&Point2::new(1.0, 1.5)));
        let g = tile_grid(&w, 7, 5).unwrap();
        assert_relative_eq!(g.total_area(), 8.0, epsilon = 1e-12);
        assert_relative_eq!(erode_border(&w, 0.2).unwrap().area(), 2.6 * 2.6 - 1.8 - std::f64::consts::PI * 0.04, epsilon = 2e-3);
    }

    #[test]
    fn json_round_trip() {
        let w = l_shape();
        let s = serde_json::to_string(&w).unwrap();
        assert!(s.starts_with("{\"rings\":[[[0.0,0.0],"));
        let back: PolygonalWindow<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
        assert!(serde_json::from_str::<PolygonalWindow<f64>>(r#"{"rings":[[[0,0],[1,1]]],"area":0}"#).is_err());
    }

    #[test]
    fn self_intersecting_ring_rejected() {
        let bow = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        assert!(PolygonalWindow::from_rings(vec![bow]).is_err());
    }

    #[test]
    fn translated_overlap() {
        let a = sq(0.0, 0.0, 2.0);
        assert_relative_eq!(a.translated_overlap_area(0.5, -0.5), 1.5 * 1.5);
        let tri = PolygonalWindow::from_rings(vec![vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(0.0, 2.0),
        ]])
        .unwrap();
        // Shifting a right triangle along x by 1 leaves a similar triangle of half the legs.
        assert_relative_eq!(tri.translated_overlap_area(1.0, 0.0), 0.5, epsilon = 1e-12);
    }
}
