//! Planar vectors, poses, and piecewise-linear polyline projection.

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
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product; positive when `o` is to the left of `self`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotates counter-clockwise by `theta`.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal of unit length; zero for the zero vector.
    pub fn left_normal(self) -> Vec2 {
        let n = self.norm();
        if n == 0.0 {
            Vec2::ZERO
        } else {
            Vec2::new(-self.y / n, self.x / n)
        }
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
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
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if !theta.is_finite() {
        return theta;
    }
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Position plus heading; the heading is the x-axis of the local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Pose { position, heading }
    }

    /// World point expressed in this pose's frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.position).rotate(-self.heading)
    }

    /// World direction (velocity, acceleration) expressed in this pose's frame.
    pub fn dir_to_local(&self, v: Vec2) -> Vec2 {
        v.rotate(-self.heading)
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        p.rotate(self.heading) + self.position
    }

    pub fn dir_to_world(&self, v: Vec2) -> Vec2 {
        v.rotate(self.heading)
    }
}

/// Foot of the perpendicular from a query point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length along the polyline to the foot point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub d: f64,
    /// Segment index holding the foot point.
    pub segment: usize,
    /// Segment parameter in `[0, 1]`.
    pub t: f64,
    /// Heading of the segment holding the foot point.
    pub heading: f64,
    /// True when the foot fell strictly between segment endpoints without clamping.
    pub interior: bool,
    pub foot: Vec2,
}

/// Cumulative arc length at every vertex.
pub fn arc_lengths(points: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in points.windows(2) {
        acc += w[0].distance(w[1]);
        out.push(acc);
    }
    out
}

/// Projects `p` onto a polyline with at least two points, clamping to the
/// endpoints. Ties between segments resolve toward the lower segment index.
pub fn project_onto_polyline(points: &[Vec2], arc: &[f64], p: Vec2) -> Option<Projection> {
    if points.len() < 2 {
        return None;
    }
    let mut best: Option<(f64, Projection)> = None;
    for i in 0..points.len() - 1 {
        let a = points[i];
        let b = points[i + 1];
        let seg = b - a;
        let len_sq = seg.norm_sq();
        if len_sq == 0.0 {
            continue;
        }
        let raw_t = (p - a).dot(seg) / len_sq;
        let t = raw_t.clamp(0.0, 1.0);
        let foot = a + seg * t;
        let dist_sq = (p - foot).norm_sq();
        if best.as_ref().is_some_and(|(d, _)| dist_sq >= *d) {
            continue;
        }
        let side = seg.cross(p - a);
        let dist = dist_sq.sqrt();
        let d = if side < 0.0 { -dist } else { dist };
        let proj = Projection {
            s: arc[i] + t * (arc[i + 1] - arc[i]),
            d,
            segment: i,
            t,
            heading: seg.angle(),
            interior: raw_t > 0.0 && raw_t < 1.0,
            foot,
        };
        best = Some((dist_sq, proj));
    }
    best.map(|(_, p)| p)
}

/// Inverse of [`project_onto_polyline`] for interior projections.
pub fn frenet_to_world(points: &[Vec2], arc: &[f64], s: f64, d: f64) -> Option<Vec2> {
    if points.len() < 2 {
        return None;
    }
    let last = points.len() - 2;
    let mut seg = last;
    for i in 0..=last {
        if s <= arc[i + 1] {
            seg = i;
            break;
        }
    }
    let a = points[seg];
    let b = points[seg + 1];
    let len = arc[seg + 1] - arc[seg];
    if len == 0.0 {
        return None;
    }
    let t = (s - arc[seg]) / len;
    let dir = b - a;
    Some(a + dir * t + dir.left_normal() * d)
}

/// Closest point on a polyline (one or more vertices) to `p`.
pub fn closest_point_on_polyline(points: &[Vec2], p: Vec2) -> Option<Vec2> {
    match points.len() {
        0 => None,
        1 => Some(points[0]),
        _ => {
            let mut best = points[0];
            let mut best_d = f64::INFINITY;
            for w in points.windows(2) {
                let seg = w[1] - w[0];
                let len_sq = seg.norm_sq();
                let foot = if len_sq == 0.0 {
                    w[0]
                } else {
                    w[0] + seg * ((p - w[0]).dot(seg) / len_sq).clamp(0.0, 1.0)
                };
                let d = (p - foot).norm_sq();
                if d < best_d {
                    best_d = d;
                    best = foot;
                }
            }
            Some(best)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_wraps_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.5 + 4.0 * PI) - 0.5).abs() < 1e-12);
        assert!((normalize_angle(-0.5 - 2.0 * PI) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn local_frame_round_trip() {
        let pose = Pose::new(Vec2::new(3.0, -2.0), 0.7);
        let p = Vec2::new(10.0, 4.5);
        let back = pose.to_world(pose.to_local(p));
        assert!(back.distance(p) < 1e-12);
    }

    #[test]
    fn projection_signs_and_clamps() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(20.0, 0.0)];
        let arc = arc_lengths(&pts);
        let p = project_onto_polyline(&pts, &arc, Vec2::new(12.0, 3.0)).unwrap();
        assert!((p.s - 12.0).abs() < 1e-12);
        assert!((p.d - 3.0).abs() < 1e-12);
        let q = project_onto_polyline(&pts, &arc, Vec2::new(5.0, -2.0)).unwrap();
        assert!((q.d + 2.0).abs() < 1e-12);
        let beyond = project_onto_polyline(&pts, &arc, Vec2::new(25.0, 0.0)).unwrap();
        assert_eq!(beyond.s, 20.0);
        assert!(!beyond.interior);
    }
}
