//! Ground-truth world model, synthetic scenario generation and dataset files.

mod generate;
mod io;

use serde::{Deserialize, Serialize};

use crate::error::{LhpfError, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::sim::idm::LaneCoord;

pub use generate::{generate_scenario, ScenarioKind, EGO_BBOX, LANE_WIDTH};
pub use io::{load_dataset, save_dataset, DATASET_HEADER};

/// Simulation and logging period.
pub const DT: f64 = 0.1;
pub const FRAMES_PER_SECOND: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub length: f64,
    pub width: f64,
}

impl BBox {
    pub const fn new(length: f64, width: f64) -> Self {
        BBox { length, width }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    /// Always kept in (-pi, pi].
    pub heading: f64,
    pub velocity: Vec2,
    pub bbox: BBox,
    pub observed: bool,
}

impl AgentState {
    pub fn new(position: Vec2, heading: f64, velocity: Vec2, bbox: BBox) -> Self {
        AgentState { position, heading: wrap_angle(heading), velocity, bbox, observed: true }
    }

    pub fn unobserved() -> Self {
        AgentState {
            position: Vec2::ZERO,
            heading: 0.0,
            velocity: Vec2::ZERO,
            bbox: BBox::new(0.0, 0.0),
            observed: false,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    Lane,
    RouteReference,
    Crosswalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Vec2>,
    pub left_boundary: Vec<Vec2>,
    pub right_boundary: Vec<Vec2>,
    /// m/s
    pub speed_limit: f64,
    pub kind: PolylineKind,
}

impl Polyline {
    /// Builds a polyline with boundaries offset `half_width` to either side of `points`.
    pub fn with_half_width(points: Vec<Vec2>, half_width: f64, speed_limit: f64, kind: PolylineKind) -> Self {
        let n = points.len();
        let normals: Vec<Vec2> = (0..n)
            .map(|i| {
                let a = points[i.saturating_sub(1)];
                let b = points[(i + 1).min(n - 1)];
                let t = b - a;
                t * (1.0 / t.norm())
            })
            .map(Vec2::perp)
            .collect();
        let left_boundary = points.iter().zip(&normals).map(|(p, nrm)| *p + *nrm * half_width).collect();
        let right_boundary = points.iter().zip(&normals).map(|(p, nrm)| *p - *nrm * half_width).collect();
        Polyline { points, left_boundary, right_boundary, speed_limit, kind }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n < 2 || self.left_boundary.len() != n || self.right_boundary.len() != n {
            return Err(LhpfError::InvalidArgument(format!(
                "polyline needs >= 2 points with matching boundaries (points {n}, left {}, right {})",
                self.left_boundary.len(),
                self.right_boundary.len()
            )));
        }
        if self.points.windows(2).any(|w| w[0].distance(w[1]) <= 1e-6) {
            return Err(LhpfError::InvalidArgument("polyline has coincident consecutive points".into()));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        crate::geometry::arc_length(&self.points)
    }

    pub fn half_width_at(&self, i: usize) -> f64 {
        0.5 * self.left_boundary[i].distance(self.right_boundary[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticObstacle {
    pub position: Vec2,
    pub heading: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Green,
    Red,
    None,
}

impl SignalState {
    pub fn code(self) -> u32 {
        match self {
            SignalState::None => 0,
            SignalState::Green => 1,
            SignalState::Red => 2,
        }
    }
}

/// A background agent's log plus the lane it follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: u32,
    /// Index into [`ScenarioWorld::map`].
    pub lane: usize,
    /// IDM desired speed, never above the lane speed limit.
    pub desired_speed: f64,
    /// Lane coordinates per frame; `states` is derived from these.
    pub coords: Vec<LaneCoord>,
    pub states: Vec<AgentState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioWorld {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub duration_s: f64,
    /// Expert log at 10 Hz, frame 0 ..= duration_s * 10.
    pub ego_track: Vec<AgentState>,
    pub agent_tracks: Vec<AgentTrack>,
    pub map: Vec<Polyline>,
    pub obstacles: Vec<StaticObstacle>,
    pub reference_lines: Vec<Polyline>,
    /// Signal state per entry of `map`.
    pub traffic_context: Vec<SignalState>,
}

impl ScenarioWorld {
    pub fn num_frames(&self) -> usize {
        self.ego_track.len()
    }

    pub fn last_frame(&self) -> usize {
        self.ego_track.len() - 1
    }

    pub fn lanes(&self) -> impl Iterator<Item = (usize, &Polyline)> {
        self.map.iter().enumerate().filter(|(_, p)| p.kind == PolylineKind::Lane)
    }

    /// Cuts an observation window at `t_now` using the default 2 s history / 8 s horizon.
    pub fn slice_window(&self, t_now: usize) -> Result<ObservationWindow<'_>> {
        self.slice_window_with(t_now, WindowConfig::default())
    }

    pub fn slice_window_with(&self, t_now: usize, cfg: WindowConfig) -> Result<ObservationWindow<'_>> {
        let last = self.last_frame();
        if t_now < cfg.history_frames || t_now + cfg.horizon_frames > last {
            return Err(LhpfError::OutOfRange(format!(
                "t_now={t_now} needs {} history and {} horizon frames within 0..={last}",
                cfg.history_frames, cfg.horizon_frames
            )));
        }
        Ok(ObservationWindow {
            scenario: self,
            t_now,
            history_frames: cfg.history_frames,
            horizon_frames: cfg.horizon_frames,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ego_track.len();
        if self.agent_tracks.iter().any(|a| a.states.len() != n || a.coords.len() != n) {
            return Err(LhpfError::InvalidArgument("agent tracks must share the ego time base".into()));
        }
        if self.reference_lines.is_empty() {
            return Err(LhpfError::InvalidArgument("scenario needs at least one reference line".into()));
        }
        if self.traffic_context.len() != self.map.len() {
            return Err(LhpfError::InvalidArgument("traffic_context must have one entry per map polyline".into()));
        }
        for p in self.map.iter().chain(&self.reference_lines) {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub history_frames: usize,
    pub horizon_frames: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { history_frames: 20, horizon_frames: 80 }
    }
}

/// A read-only view of one planning instant. History covers frames
/// `t_now - history_frames + 1 ..= t_now`, the horizon `t_now + 1 ..= t_now + horizon_frames`.
#[derive(Debug, Clone, Copy)]
pub struct ObservationWindow<'a> {
    pub scenario: &'a ScenarioWorld,
    pub t_now: usize,
    pub history_frames: usize,
    pub horizon_frames: usize,
}

impl<'a> ObservationWindow<'a> {
    pub fn history_range(&self) -> std::ops::RangeInclusive<usize> {
        self.t_now + 1 - self.history_frames..=self.t_now
    }

    pub fn ego_history(&self) -> &'a [AgentState] {
        &self.scenario.ego_track[self.history_range()]
    }

    pub fn expert_horizon(&self) -> &'a [AgentState] {
        &self.scenario.ego_track[self.t_now + 1..=self.t_now + self.horizon_frames]
    }

    pub fn ego_now(&self) -> &'a AgentState {
        &self.scenario.ego_track[self.t_now]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_bounds() {
        let s = generate_scenario(ScenarioKind::Straight, 0).unwrap();
        assert_eq!(s.duration_s, 20.0);
        let last = s.last_frame();
        assert_eq!(last, 200);
        let w = s.slice_window(20).unwrap();
        assert_eq!(w.history_frames, 20);
        assert_eq!(w.horizon_frames, 80);
        assert_eq!(w.ego_history().len(), 20);
        assert_eq!(w.expert_horizon().len(), 80);
        assert!(matches!(s.slice_window(0), Err(LhpfError::OutOfRange(_))));
        assert!(matches!(s.slice_window(19), Err(LhpfError::OutOfRange(_))));
        assert!(s.slice_window(last - 80).is_ok());
        assert!(matches!(s.slice_window(last - 79), Err(LhpfError::OutOfRange(_))));
    }

    #[test]
    fn windows_are_independent_reads() {
        let s = generate_scenario(ScenarioKind::LaneChange, 3).unwrap();
        let a = s.slice_window(30).unwrap();
        let b = s.slice_window(40).unwrap();
        assert_eq!(a.ego_history()[10], b.ego_history()[0]);
        assert_eq!(a.scenario, b.scenario);
    }

    #[test]
    fn polyline_validation() {
        let p = Polyline::with_half_width(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)],
            1.75,
            10.0,
            PolylineKind::Lane,
        );
        p.validate().unwrap();
        assert!((p.half_width_at(0) - 1.75).abs() < 1e-12);
        let mut bad = p.clone();
        bad.points[1] = bad.points[0];
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.left_boundary.pop();
        assert!(bad.validate().is_err());
    }
}
