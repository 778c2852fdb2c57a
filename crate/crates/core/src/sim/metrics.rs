//! Episode metrics and the composite score.

use serde::{Deserialize, Serialize};

use crate::geometry::{project, Pose2, Vec2};
use crate::losses::comfort::{comfort_loss, states_to_points, ComfortLimits};
use crate::scenario::{AgentState, Polyline, ScenarioWorld, DT};
use crate::sim::collision::OrientedBox;

/// Allowed speed above the lane limit before a frame counts as speeding, m/s.
pub const SPEED_TOLERANCE: f64 = 0.5;
/// Wrong-way driving tolerated before direction compliance fails, s.
pub const WRONG_WAY_LIMIT_S: f64 = 1.0;
/// Speeds below this never count as wrong-way, m/s.
const WRONG_WAY_MIN_SPEED: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub at_fault_collision_free: f64,
    pub drivable_compliance: f64,
    pub progress_ratio: f64,
    pub comfort_ok: f64,
    pub speed_compliance: f64,
    pub direction_compliance: f64,
    pub composite_score: f64,
}

impl Metrics {
    pub fn zero() -> Self {
        Metrics {
            at_fault_collision_free: 0.0,
            drivable_compliance: 0.0,
            progress_ratio: 0.0,
            comfort_ok: 0.0,
            speed_compliance: 0.0,
            direction_compliance: 0.0,
            composite_score: 0.0,
        }
    }

    pub fn with_composite(mut self) -> Self {
        self.composite_score = composite_score(&self);
        self
    }
}

/// `100 * collision_free * drivable * direction * mean(progress, comfort, speed)`.
pub fn composite_score(m: &Metrics) -> f64 {
    let gate = m.at_fault_collision_free * m.drivable_compliance * m.direction_compliance;
    100.0 * gate * (m.progress_ratio + m.comfort_ok + m.speed_compliance) / 3.0
}

pub fn path_length(states: &[AgentState]) -> f64 {
    states.windows(2).map(|w| w[0].position.distance(w[1].position)).sum()
}

/// Executed distance over the expert's, clipped to `[0, 1]`. A motionless expert counts as full progress.
pub fn progress_ratio(executed: &[AgentState], expert: &[AgentState]) -> f64 {
    let e = path_length(expert);
    if e <= 1e-9 {
        return 1.0;
    }
    (path_length(executed) / e).clamp(0.0, 1.0)
}

/// Overlap with an agent or obstacle that the ego is held responsible for. Contact from
/// behind while the ego is not accelerating is excused.
pub fn at_fault(ego: &AgentState, ego_accel: f64, other: &OrientedBox) -> bool {
    if !OrientedBox::from_agent(ego).intersects(other) {
        return false;
    }
    let local = Pose2::new(ego.position, ego.heading).to_local(other.center);
    let from_behind = local.x < 0.0 && local.x.abs() > local.y.abs();
    !(from_behind && ego_accel <= 0.0)
}

fn lane_contains(lane: &Polyline, p: Vec2) -> bool {
    let pr = project(&lane.points, p);
    let hw = 0.5 * (lane.half_width_at(pr.segment) + lane.half_width_at(pr.segment + 1));
    p.distance(pr.foot) <= hw + 1e-9
}

/// Every footprint corner lies in some lane corridor.
pub fn on_drivable(world: &ScenarioWorld, ego: &AgentState) -> bool {
    OrientedBox::from_agent(ego).corners().iter().all(|&c| world.lanes().any(|(_, l)| lane_contains(l, c)))
}

/// Lane whose centerline is nearest to `p`; ties go to the lower index.
pub fn nearest_lane(world: &ScenarioWorld, p: Vec2) -> Option<&Polyline> {
    world
        .lanes()
        .map(|(i, l)| (i, l, p.distance(project(&l.points, p).foot)))
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
        .map(|(_, l, _)| l)
}

/// Longitudinal acceleration per frame from consecutive speeds (first frame 0).
fn accelerations(states: &[AgentState]) -> Vec<f64> {
    let mut out = vec![0.0; states.len()];
    for i in 1..states.len() {
        out[i] = (states[i].speed() - states[i - 1].speed()) / DT;
    }
    out
}

/// Scores an executed ego trace. `ego[0]` is the start state; `agents[k]` are the agent
/// states at the same frame as `ego[k]`; `expert` covers the same frames as `ego`.
pub fn compute_metrics(world: &ScenarioWorld, ego: &[AgentState], agents: &[Vec<AgentState>], expert: &[AgentState], limits: &ComfortLimits) -> Metrics {
    let acc = accelerations(ego);
    let obstacles: Vec<OrientedBox> = world.obstacles.iter().map(OrientedBox::from_obstacle).collect();
    let mut collision = false;
    let mut drivable = true;
    let mut speeding = 0usize;
    let mut wrong_way = 0usize;
    for (k, e) in ego.iter().enumerate() {
        let others = agents.get(k).map(|v| v.as_slice()).unwrap_or(&[]);
        if others.iter().filter(|a| a.observed).map(OrientedBox::from_agent).chain(obstacles.iter().copied()).any(|b| at_fault(e, acc[k], &b)) {
            collision = true;
        }
        if !on_drivable(world, e) {
            drivable = false;
        }
        if k == 0 {
            continue;
        }
        if let Some(lane) = nearest_lane(world, e.position) {
            if e.speed() > lane.speed_limit + SPEED_TOLERANCE {
                speeding += 1;
            }
            let t = project(&lane.points, e.position).tangent;
            if e.speed() > WRONG_WAY_MIN_SPEED && Vec2::from_angle(e.heading).dot(t) < 0.0 {
                wrong_way += 1;
            }
        }
    }
    let steps = ego.len().saturating_sub(1).max(1);
    let comfort_ok = match comfort_loss(&states_to_points(ego), DT, limits) {
        Ok(l) if l <= 0.0 => 1.0,
        _ => 0.0,
    };
    Metrics {
        at_fault_collision_free: if collision { 0.0 } else { 1.0 },
        drivable_compliance: if drivable { 1.0 } else { 0.0 },
        progress_ratio: progress_ratio(ego, expert),
        comfort_ok,
        speed_compliance: 1.0 - speeding as f64 / steps as f64,
        direction_compliance: if wrong_way as f64 * DT > WRONG_WAY_LIMIT_S { 0.0 } else { 1.0 },
        composite_score: 0.0,
    }
    .with_composite()
}
