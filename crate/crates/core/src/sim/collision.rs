//! Oriented-rectangle overlap by the separating axis test.

use crate::geometry::Vec2;
use crate::scenario::{AgentState, BBox, StaticObstacle};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, heading: f64, bbox: BBox) -> Self {
        OrientedBox { center, heading, half_length: 0.5 * bbox.length, half_width: 0.5 * bbox.width }
    }

    pub fn from_agent(a: &AgentState) -> Self {
        OrientedBox::new(a.position, a.heading, a.bbox)
    }

    pub fn from_obstacle(o: &StaticObstacle) -> Self {
        OrientedBox::new(o.position, o.heading, o.bbox)
    }

    fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.heading);
        [u, u.perp()]
    }

    /// Corners counter-clockwise starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let l = u * self.half_length;
        let w = v * self.half_width;
        [self.center + l + w, self.center - l + w, self.center - l - w, self.center + l - w]
    }

    fn radius_along(&self, axis: Vec2) -> f64 {
        let [u, v] = self.axes();
        self.half_length * u.dot(axis).abs() + self.half_width * v.dot(axis).abs()
    }

    /// True when the boxes overlap (touching counts as overlap).
    pub fn intersects(&self, other: &OrientedBox) -> bool {
        let d = other.center - self.center;
        self.axes()
            .into_iter()
            .chain(other.axes())
            .all(|axis| d.dot(axis).abs() <= self.radius_along(axis) + other.radius_along(axis))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let [u, v] = self.axes();
        let d = p - self.center;
        d.dot(u).abs() <= self.half_length && d.dot(v).abs() <= self.half_width
    }
}
