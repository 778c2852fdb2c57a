//! Planar geometry shared by the scenario generator, feature builder and simulator.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

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

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Counter-clockwise rotation by `theta`.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; guard the 2pi edge from rounding.
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// A rigid planar transform: rotation by `heading` then translation by `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub origin: Vec2,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(origin: Vec2, heading: f64) -> Self {
        Pose2 { origin, heading }
    }

    /// Maps a world point into this pose's local frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotate(-self.heading)
    }

    /// Maps a world direction (no translation) into the local frame.
    pub fn dir_to_local(&self, d: Vec2) -> Vec2 {
        d.rotate(-self.heading)
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        p.rotate(self.heading) + self.origin
    }

    pub fn dir_to_world(&self, d: Vec2) -> Vec2 {
        d.rotate(self.heading)
    }

    pub fn heading_to_local(&self, theta: f64) -> f64 {
        wrap_angle(theta - self.heading)
    }

    pub fn heading_to_world(&self, theta: f64) -> f64 {
        wrap_angle(theta + self.heading)
    }
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length from the first vertex to the foot point.
    pub arc_length: f64,
    /// Signed offset, positive to the left of the travel direction.
    pub lateral: f64,
    pub foot: Vec2,
    pub tangent: Vec2,
    pub segment: usize,
}

pub fn arc_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

pub fn cumulative_arc_length(points: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut s = 0.0;
    out.push(0.0);
    for w in points.windows(2) {
        s += w[0].distance(w[1]);
        out.push(s);
    }
    out
}

/// Nearest-segment projection. Panics on fewer than two points.
pub fn project(points: &[Vec2], p: Vec2) -> Projection {
    assert!(points.len() >= 2, "projection needs at least two points");
    let mut best: Option<(f64, Projection)> = None;
    let mut s0 = 0.0;
    for (i, w) in points.windows(2).enumerate() {
        let seg = w[1] - w[0];
        let len = seg.norm();
        let tangent = seg * (1.0 / len);
        let t = ((p - w[0]).dot(tangent)).clamp(0.0, len);
        let foot = w[0] + tangent * t;
        let d = p.distance(foot);
        let candidate = Projection {
            arc_length: s0 + t,
            lateral: tangent.cross(p - w[0]),
            foot,
            tangent,
            segment: i,
        };
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, candidate));
        }
        s0 += len;
    }
    best.expect("non-empty").1
}

/// Point and unit tangent at arc length `s`, clamped to the polyline's extent.
pub fn point_at(points: &[Vec2], s: f64) -> (Vec2, Vec2) {
    assert!(points.len() >= 2);
    let mut acc = 0.0;
    let last = points.len() - 2;
    for (i, w) in points.windows(2).enumerate() {
        let seg = w[1] - w[0];
        let len = seg.norm();
        let tangent = seg * (1.0 / len);
        if s <= acc + len || i == last {
            let t = (s - acc).clamp(0.0, len);
            return (w[0] + tangent * t, tangent);
        }
        acc += len;
    }
    unreachable!()
}

/// Resamples to `n` points evenly spaced in arc length between `s_start` and `s_end`.
pub fn resample_between(points: &[Vec2], s_start: f64, s_end: f64, n: usize) -> Vec<Vec2> {
    assert!(n >= 2);
    (0..n)
        .map(|i| {
            let s = s_start + (s_end - s_start) * i as f64 / (n - 1) as f64;
            point_at(points, s).0
        })
        .collect()
}

pub fn resample(points: &[Vec2], n: usize) -> Vec<Vec2> {
    resample_between(points, 0.0, arc_length(points), n)
}
