//! Planar geometry primitives shared by every module.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(angle: f64) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Counter-clockwise normal.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            Vec2::new(self.x / n, self.y / n)
        } else {
            Vec2::ZERO
        }
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Rigid SE(2) pose: translation plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, yaw: 0.0 };

    pub const fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.yaw)
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: Vec2) -> Vec2 {
        p.rotate(self.yaw) + self.position()
    }

    /// Maps a parent-frame point into this pose's local frame.
    pub fn inverse_transform_point(&self, p: Vec2) -> Vec2 {
        (p - self.position()).rotate(-self.yaw)
    }

    /// `self ∘ other`: `other` is expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let t = self.transform_point(other.position());
        Pose2::new(t.x, t.y, wrap_angle(self.yaw + other.yaw))
    }

    pub fn inverse(&self) -> Pose2 {
        let t = (-self.position()).rotate(-self.yaw);
        Pose2::new(t.x, t.y, wrap_angle(-self.yaw))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }
}

/// Closest point on segment `a-b` to `p`, with its parameter in [0, 1].
pub fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> (Vec2, f64) {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    (a + ab * t, t)
}

pub fn segments_intersect(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> bool {
    fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
        (b - a).cross(c - a)
    }
    fn on_seg(a: Vec2, b: Vec2, p: Vec2) -> bool {
        p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
    }
    let d1 = orient(b0, b1, a0);
    let d2 = orient(b0, b1, a1);
    let d3 = orient(a0, a1, b0);
    let d4 = orient(a0, a1, b1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_seg(b0, b1, a0))
        || (d2 == 0.0 && on_seg(b0, b1, a1))
        || (d3 == 0.0 && on_seg(a0, a1, b0))
        || (d4 == 0.0 && on_seg(a0, a1, b1))
}

pub fn segment_distance(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> f64 {
    if segments_intersect(a0, a1, b0, b1) {
        return 0.0;
    }
    let d = [
        closest_on_segment(a0, b0, b1).0.dist(a0),
        closest_on_segment(a1, b0, b1).0.dist(a1),
        closest_on_segment(b0, a0, a1).0.dist(b0),
        closest_on_segment(b1, a0, a1).0.dist(b1),
    ];
    d.into_iter().fold(f64::INFINITY, f64::min)
}

/// Even-odd point-in-polygon test. The polygon may or may not repeat its
/// first vertex at the end.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Piecewise-linear path with cumulative arclength.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cum: Vec<f64>,
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    pub s: f64,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub lateral: f64,
    pub point: Vec2,
    pub segment: usize,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Self {
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += p.dist(points[i - 1]);
            }
            cum.push(acc);
        }
        Self { points, cum }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    fn locate(&self, s: f64) -> usize {
        // index i of the segment [i, i+1] containing s
        match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(i) => i.min(self.points.len().saturating_sub(2)),
            Err(i) => i.saturating_sub(1).min(self.points.len().saturating_sub(2)),
        }
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        if self.points.len() == 1 {
            return self.points[0];
        }
        let s = s.clamp(0.0, self.length());
        let i = self.locate(s);
        let seg = self.cum[i + 1] - self.cum[i];
        if seg <= 0.0 {
            return self.points[i];
        }
        self.points[i].lerp(self.points[i + 1], (s - self.cum[i]) / seg)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        let s = s.clamp(0.0, self.length());
        let mut i = self.locate(s);
        // skip zero-length segments
        while i + 2 < self.points.len() && self.cum[i + 1] - self.cum[i] <= 0.0 {
            i += 1;
        }
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Global nearest projection.
    pub fn project(&self, p: Vec2) -> PathProjection {
        self.project_window(p, 0, self.points.len().saturating_sub(1))
    }

    /// Nearest projection restricted to segments `first..last` (segment i
    /// spans points i and i+1).
    pub fn project_window(&self, p: Vec2, first: usize, last: usize) -> PathProjection {
        let mut best = PathProjection { s: 0.0, lateral: 0.0, point: self.points[0], segment: 0 };
        if self.points.len() < 2 {
            best.lateral = (p - best.point).norm();
            return best;
        }
        let last = last.min(self.points.len() - 2);
        let mut best_d = f64::INFINITY;
        for i in first.min(last)..=last {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (q, t) = closest_on_segment(p, a, b);
            let d = q.dist(p);
            if d < best_d {
                best_d = d;
                let dir = (b - a).normalized();
                best = PathProjection {
                    s: self.cum[i] + t * (self.cum[i + 1] - self.cum[i]),
                    lateral: dir.cross(p - q).signum() * d,
                    point: q,
                    segment: i,
                };
            }
        }
        best
    }

    pub fn segment_of(&self, s: f64) -> usize {
        if self.points.len() < 2 {
            return 0;
        }
        self.locate(s.clamp(0.0, self.length()))
    }

    /// Offset every vertex to the left by `d` (negative = right), using the
    /// averaged normal at interior vertices so vertex count is preserved.
    pub fn offset(&self, d: f64) -> Polyline {
        let n = self.points.len();
        if n < 2 || d == 0.0 {
            return self.clone();
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let prev = if i > 0 { Some((self.points[i] - self.points[i - 1]).normalized()) } else { None };
            let next = if i + 1 < n { Some((self.points[i + 1] - self.points[i]).normalized()) } else { None };
            let normal = match (prev, next) {
                (Some(a), Some(b)) => {
                    let m = (a + b).normalized();
                    if m == Vec2::ZERO {
                        a.perp()
                    } else {
                        let m = m.perp();
                        // miter scaling, capped for sharp corners
                        let cos_half = m.dot(a.perp()).max(0.5);
                        m * (1.0 / cos_half)
                    }
                }
                (Some(a), None) => a.perp(),
                (None, Some(b)) => b.perp(),
                (None, None) => Vec2::ZERO,
            };
            out.push(self.points[i] + normal * d);
        }
        Polyline::new(out)
    }

    pub fn reversed(&self) -> Polyline {
        let mut pts = self.points.clone();
        pts.reverse();
        Polyline::new(pts)
    }

    /// Sub-path between vertex indices `from..=to`.
    pub fn slice_vertices(&self, from: usize, to: usize) -> Polyline {
        Polyline::new(self.points[from..=to].to_vec())
    }
}
