//! Intelligent Driver Model car following for background agents.

use serde::{Deserialize, Serialize};

use crate::geometry::{point_at, project};
use crate::scenario::{AgentState, BBox, Polyline, DT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// T, seconds
    pub time_headway: f64,
    /// a, m/s^2
    pub max_accel: f64,
    /// b, m/s^2
    pub comfortable_decel: f64,
    /// s0, meters
    pub min_gap: f64,
    /// delta
    pub exponent: f64,
    /// Floor on the returned acceleration. Only reached when a leader is already inside s*.
    pub emergency_decel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            time_headway: 1.5,
            max_accel: 1.4,
            comfortable_decel: 2.0,
            min_gap: 2.0,
            exponent: 4.0,
            emergency_decel: 9.0,
        }
    }
}

/// Gap to and closing speed on the vehicle ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// Bumper-to-bumper distance, meters.
    pub gap: f64,
    /// Own speed minus leader speed.
    pub approach_rate: f64,
}

impl IdmParams {
    pub fn desired_gap(&self, v: f64, approach_rate: f64) -> f64 {
        self.min_gap
            + v * self.time_headway
            + v * approach_rate / (2.0 * (self.max_accel * self.comfortable_decel).sqrt())
    }

    /// a [1 - (v/v0)^delta - (s*/s)^2], clamped below at `-emergency_decel`.
    pub fn acceleration(&self, v: f64, desired_speed: f64, leader: Option<Leader>) -> f64 {
        let free = 1.0 - (v / desired_speed).powf(self.exponent);
        let interaction = match leader {
            Some(l) => {
                let s_star = self.desired_gap(v, l.approach_rate).max(0.0);
                let gap = l.gap.max(1e-3);
                (s_star / gap).powi(2)
            }
            None => 0.0,
        };
        (self.max_accel * (free - interaction)).max(-self.emergency_decel)
    }
}

/// Longitudinal state of a lane-bound agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneCoord {
    /// Arc length along the lane centerline.
    pub progress: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LaneAgent<'a> {
    pub lane_index: usize,
    pub lane: &'a Polyline,
    pub coord: LaneCoord,
    pub bbox: BBox,
}

impl LaneAgent<'_> {
    pub fn state(&self) -> AgentState {
        lane_state(self.lane, self.coord, self.bbox)
    }
}

pub fn lane_state(lane: &Polyline, coord: LaneCoord, bbox: BBox) -> AgentState {
    let (p, t) = point_at(&lane.points, coord.progress);
    AgentState::new(p, t.angle(), t * coord.speed, bbox)
}

/// Nearest vehicle ahead on the same lane; the ego counts when its footprint can overlap the lane.
pub fn find_leader(idx: usize, agents: &[LaneAgent<'_>], ego: Option<&AgentState>) -> Option<Leader> {
    let me = &agents[idx];
    let mut best: Option<Leader> = None;
    let mut consider = |ahead_progress: f64, length: f64, speed: f64| {
        let gap = ahead_progress - me.coord.progress - 0.5 * (length + me.bbox.length);
        if ahead_progress > me.coord.progress && best.is_none_or(|b| gap < b.gap) {
            best = Some(Leader { gap, approach_rate: me.coord.speed - speed });
        }
    };
    for (j, other) in agents.iter().enumerate() {
        if j != idx && other.lane_index == me.lane_index {
            consider(other.coord.progress, other.bbox.length, other.coord.speed);
        }
    }
    if let Some(ego) = ego {
        let pr = project(&me.lane.points, ego.position);
        let lane_len = me.lane.length();
        let inside = pr.arc_length > 0.0 && pr.arc_length < lane_len;
        if inside && pr.lateral.abs() < 0.5 * (ego.bbox.width + me.bbox.width) + 0.5 {
            let along = ego.velocity.dot(pr.tangent);
            consider(pr.arc_length, ego.bbox.length, along);
        }
    }
    best
}

/// One IDM step for every agent, all reading the same pre-step snapshot.
pub fn step_agents(
    agents: &[LaneAgent<'_>],
    ego: Option<&AgentState>,
    params: &IdmParams,
    desired_speed: &[f64],
) -> Vec<LaneCoord> {
    assert_eq!(agents.len(), desired_speed.len(), "one desired speed per agent");
    agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let leader = find_leader(i, agents, ego);
            let acc = params.acceleration(a.coord.speed, desired_speed[i], leader);
            let v = a.coord.speed;
            let mut v_next = v + acc * DT;
            let progress = if v_next < 0.0 {
                // stop inside the step
                let t_stop = v / -acc;
                v_next = 0.0;
                a.coord.progress + 0.5 * v * t_stop
            } else {
                a.coord.progress + 0.5 * (v + v_next) * DT
            };
            LaneCoord { progress, speed: v_next }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::scenario::PolylineKind;

    #[test]
    fn free_road_equilibrium() {
        let p = IdmParams::default();
        let a = p.acceleration(12.0, 12.0, None);
        assert!(a.abs() < 1e-9);
        let far = p.acceleration(12.0, 12.0, Some(Leader { gap: 1e9, approach_rate: 0.0 }));
        assert!(far <= 0.0 && far.abs() < 1e-9);
    }

    #[test]
    fn standstill_start_approaches_max_accel() {
        let p = IdmParams::default();
        // v = 0 leaves a (1 - (s0/s)^2)
        for gap in [10.0, 100.0, 1e6] {
            let expected = p.max_accel * (1.0 - (p.min_gap / gap).powi(2));
            let got = p.acceleration(0.0, 10.0, Some(Leader { gap, approach_rate: 0.0 }));
            assert!((got - expected).abs() < 1e-12, "gap {gap}: {got} vs {expected}");
        }
        assert_eq!(p.acceleration(0.0, 10.0, None), p.max_accel);
    }

    #[test]
    fn acceleration_bounded() {
        let p = IdmParams::default();
        for v in [0.0, 3.0, 10.0, 30.0] {
            for gap in [0.1, 1.0, 5.0, 50.0] {
                for dv in [-5.0, 0.0, 5.0] {
                    let a = p.acceleration(v, 15.0, Some(Leader { gap, approach_rate: dv }));
                    assert!(a <= p.max_accel && a >= -p.emergency_decel);
                }
            }
        }
    }

    #[test]
    fn follower_stops_behind_stopped_ego() {
        let lane = Polyline::with_half_width(
            (0..=60).map(|i| Vec2::new(i as f64 * 10.0, 0.0)).collect(),
            1.75,
            12.0,
            PolylineKind::Lane,
        );
        let ego = AgentState::new(Vec2::new(150.0, 0.0), 0.0, Vec2::ZERO, BBox::new(4.6, 2.0));
        let bbox = BBox::new(4.5, 1.9);
        let mut coord = LaneCoord { progress: 100.0, speed: 12.0 };
        let p = IdmParams::default();
        let mut min_gap = f64::INFINITY;
        for _ in 0..150 {
            let agents = [LaneAgent { lane_index: 0, lane: &lane, coord, bbox }];
            coord = step_agents(&agents, Some(&ego), &p, &[12.0])[0];
            let gap = 150.0 - coord.progress - 0.5 * (4.6 + 4.5);
            min_gap = min_gap.min(gap);
        }
        assert!(coord.speed < 0.05, "follower still moving at {}", coord.speed);
        assert!(min_gap >= p.min_gap - 0.05, "gap shrank to {min_gap}");
    }
}
