//! Closed-loop episodes: replan every frame, move the ego onto the plan's first waypoint,
//! advance background agents by log replay or IDM.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LhpfError, Result};
use crate::features::SceneView;
use crate::geometry::{Pose2, Vec2};
use crate::history::{infer, infer_baseline, HistoryPool};
use crate::losses::comfort::{state_to_point, ComfortLimits, TrajPoint};
use crate::model::{PlanResult, Planner};
use crate::scenario::EGO_BBOX;
use crate::scenario::{AgentState, ScenarioWorld};
use crate::sim::idm::{lane_state, step_agents, IdmParams, LaneAgent, LaneCoord};
use crate::sim::metrics::{compute_metrics, Metrics};

/// 15 s at 10 Hz.
pub const EPISODE_STEPS: usize = 150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Reactive,
    Nonreactive,
}

impl SimMode {
    pub fn name(self) -> &'static str {
        match self {
            SimMode::Reactive => "reactive",
            SimMode::Nonreactive => "nonreactive",
        }
    }
}

impl FromStr for SimMode {
    type Err = LhpfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reactive" => Ok(SimMode::Reactive),
            "nonreactive" | "non-reactive" => Ok(SimMode::Nonreactive),
            _ => Err(LhpfError::InvalidArgument(format!("unknown simulation mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub mode: SimMode,
    pub steps: usize,
    /// First planning frame; also the length of the logged history handed to the planner.
    pub start_frame: usize,
    pub history_frames: usize,
    pub idm: IdmParams,
    pub comfort_limits: ComfortLimits,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            mode: SimMode::Reactive,
            steps: EPISODE_STEPS,
            start_frame: 20,
            history_frames: 20,
            idm: IdmParams::default(),
            comfort_limits: ComfortLimits::default(),
        }
    }
}

/// A plan in world coordinates with the bookkeeping the trace keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub frame: usize,
    pub world: Vec<TrajPoint>,
    pub selected: Option<(usize, usize)>,
    pub scores: Vec<f64>,
}

/// Something that plans for the ego once per frame. Implementations may keep state
/// across calls within one episode.
pub trait EgoPlanner {
    fn label(&self) -> String;
    fn reset(&mut self) -> Result<()>;
    fn plan(&mut self, world: &ScenarioWorld, view: &SceneView, frame: usize) -> Result<StepPlan>;
}

/// Replays the logged expert trajectory.
#[derive(Debug, Clone, Default)]
pub struct ExpertReplay;

impl EgoPlanner for ExpertReplay {
    fn label(&self) -> String {
        "expert".into()
    }

    fn reset(&mut self) -> Result<()> {
        Ok(())
    }

    fn plan(&mut self, world: &ScenarioWorld, _view: &SceneView, frame: usize) -> Result<StepPlan> {
        let end = (frame + 80).min(world.last_frame());
        if frame >= end {
            return Err(LhpfError::PlannerFailure(format!("no logged ego states after frame {frame}")));
        }
        let world_pts = world.ego_track[frame + 1..=end].iter().map(state_to_point).collect();
        Ok(StepPlan { frame, world: world_pts, selected: None, scores: Vec::new() })
    }
}

fn to_world(pose: &Pose2, p: &TrajPoint) -> TrajPoint {
    let pos = pose.to_world(Vec2::new(p[0], p[1]));
    let dir = pose.dir_to_world(Vec2::new(p[2], p[3]));
    let vel = pose.dir_to_world(Vec2::new(p[4], p[5]));
    [pos.x, pos.y, dir.x, dir.y, vel.x, vel.y]
}

fn step_plan(view: &SceneView, frame: usize, r: &PlanResult) -> StepPlan {
    let pose = view.ego_pose();
    StepPlan {
        frame,
        world: r.selected_trajectory.iter().map(|p| to_world(&pose, p)).collect(),
        selected: r.selected,
        scores: r.scores.iter().copied().collect(),
    }
}

/// The network without the history pool.
pub struct BaselinePlanner<'a> {
    pub planner: &'a Planner,
}

impl EgoPlanner for BaselinePlanner<'_> {
    fn label(&self) -> String {
        "baseline".into()
    }

    fn reset(&mut self) -> Result<()> {
        Ok(())
    }

    fn plan(&mut self, _world: &ScenarioWorld, view: &SceneView, frame: usize) -> Result<StepPlan> {
        Ok(step_plan(view, frame, &infer_baseline(self.planner, view)?))
    }
}

/// The network with a history pool threaded through the episode.
pub struct HistoryPlanner<'a> {
    pub planner: &'a Planner,
    pool: Option<HistoryPool>,
}

impl<'a> HistoryPlanner<'a> {
    pub fn new(planner: &'a Planner) -> Self {
        HistoryPlanner { planner, pool: None }
    }
}

impl EgoPlanner for HistoryPlanner<'_> {
    fn label(&self) -> String {
        "history".into()
    }

    fn reset(&mut self) -> Result<()> {
        self.pool = Some(HistoryPool::from_config(&self.planner.config.history)?);
        Ok(())
    }

    fn plan(&mut self, _world: &ScenarioWorld, view: &SceneView, frame: usize) -> Result<StepPlan> {
        let pool = match self.pool.take() {
            Some(p) => p,
            None => HistoryPool::from_config(&self.planner.config.history)?,
        };
        let (r, pool) = infer(self.planner, view, frame, pool)?;
        self.pool = Some(pool);
        Ok(step_plan(view, frame, &r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub start_frame: usize,
    /// Ego state per frame, `start_frame ..= start_frame + steps`.
    pub ego: Vec<AgentState>,
    /// Agent states at the same frames as `ego`.
    pub agents: Vec<Vec<AgentState>>,
    /// One plan per step.
    pub plans: Vec<StepPlan>,
}

impl Trace {
    pub fn steps(&self) -> usize {
        self.plans.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub kind: String,
    pub seed: u64,
    pub mode: SimMode,
    pub planner: String,
    pub steps: usize,
    pub metrics: Metrics,
    pub failed: bool,
    pub error: Option<String>,
    /// Mean overlap distance between successive plans, m; `None` with fewer than two plans.
    pub consistency: Option<f64>,
}

fn plan_state(p: &TrajPoint) -> Result<AgentState> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(LhpfError::PlannerFailure("non-finite waypoint".into()));
    }
    Ok(AgentState::new(Vec2::new(p[0], p[1]), p[3].atan2(p[2]), Vec2::new(p[4], p[5]), EGO_BBOX))
}

/// Runs one episode and returns the trace alongside the report.
pub fn run_episode_traced(world: &ScenarioWorld, name: &str, planner: &mut dyn EgoPlanner, cfg: &EpisodeConfig) -> Result<(SimReport, Trace)> {
    let t0 = cfg.start_frame;
    let last = t0 + cfg.steps;
    if t0 + 1 < cfg.history_frames || last > world.last_frame() {
        return Err(LhpfError::OutOfRange(format!(
            "episode frames {t0}..={last} do not fit scenario with last frame {}",
            world.last_frame()
        )));
    }
    planner.reset()?;
    let mut ego_hist: Vec<AgentState> = world.ego_track[..=t0].to_vec();
    let mut agent_hist: Vec<Vec<AgentState>> = world.agent_tracks.iter().map(|a| a.states[..=t0].to_vec()).collect();
    let mut coords: Vec<LaneCoord> = world.agent_tracks.iter().map(|a| a.coords[t0]).collect();
    let desired: Vec<f64> = world.agent_tracks.iter().map(|a| a.desired_speed).collect();
    let bboxes: Vec<_> = world.agent_tracks.iter().map(|a| a.states[t0].bbox).collect();
    let mut trace = Trace { start_frame: t0, ego: vec![ego_hist[t0]], agents: vec![agent_hist.iter().map(|h| h[t0]).collect()], plans: Vec::new() };
    let mut failure: Option<String> = None;

    for frame in t0..last {
        let h0 = frame + 1 - cfg.history_frames;
        let view = SceneView {
            ego_history: &ego_hist[h0..=frame],
            agent_histories: agent_hist.iter().map(|h| &h[h0..=frame]).collect(),
            map: &world.map,
            signals: &world.traffic_context,
            obstacles: &world.obstacles,
            reference_lines: &world.reference_lines,
        };
        let next_ego = match planner.plan(world, &view, frame).and_then(|p| {
            let first = *p.world.first().ok_or_else(|| LhpfError::PlannerFailure("empty plan".into()))?;
            let s = plan_state(&first)?;
            Ok((p, s))
        }) {
            Ok((p, s)) => {
                trace.plans.push(p);
                s
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let next_agents: Vec<AgentState> = match cfg.mode {
            SimMode::Nonreactive => world.agent_tracks.iter().map(|a| a.states[frame + 1]).collect(),
            SimMode::Reactive => {
                let lane_agents: Vec<LaneAgent> = world
                    .agent_tracks
                    .iter()
                    .zip(&coords)
                    .zip(&bboxes)
                    .map(|((a, c), b)| LaneAgent { lane_index: a.lane, lane: &world.map[a.lane], coord: *c, bbox: *b })
                    .collect();
                coords = step_agents(&lane_agents, Some(&ego_hist[frame]), &cfg.idm, &desired);
                world.agent_tracks.iter().zip(&coords).zip(&bboxes).map(|((a, c), b)| lane_state(&world.map[a.lane], *c, *b)).collect()
            }
        };
        ego_hist.push(next_ego);
        for (h, s) in agent_hist.iter_mut().zip(&next_agents) {
            h.push(*s);
        }
        trace.ego.push(next_ego);
        trace.agents.push(next_agents);
    }

    let consistency = crate::ablation::consistency_metric(&trace.plans).ok();
    let (metrics, failed) = match &failure {
        Some(_) => (Metrics::zero(), true),
        None => (compute_metrics(world, &trace.ego, &trace.agents, &world.ego_track[t0..=last], &cfg.comfort_limits), false),
    };
    let report = SimReport {
        scenario: name.to_string(),
        kind: world.kind.name().to_string(),
        seed: world.seed,
        mode: cfg.mode,
        planner: planner.label(),
        steps: trace.steps(),
        metrics,
        failed,
        error: failure,
        consistency,
    };
    Ok((report, trace))
}

pub fn run_episode(world: &ScenarioWorld, name: &str, planner: &mut dyn EgoPlanner, cfg: &EpisodeConfig) -> Result<SimReport> {
    Ok(run_episode_traced(world, name, planner, cfg)?.0)
}

/// Runs every scenario with a fresh planner from `make`, in parallel, in input order.
pub fn run_suite<'a, F>(worlds: &[(String, ScenarioWorld)], cfg: &EpisodeConfig, make: F) -> Result<Vec<SimReport>>
where
    F: Fn() -> Box<dyn EgoPlanner + 'a> + Sync,
{
    use rayon::prelude::*;
    worlds
        .par_iter()
        .map(|(name, w)| {
            let mut p = make();
            run_episode(w, name, p.as_mut(), cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, ScenarioKind};

    #[test]
    fn expert_replay_is_perfect_on_every_kind() {
        for kind in ScenarioKind::ALL {
            for seed in 0..3 {
                let w = generate_scenario(kind, seed).unwrap();
                let cfg = EpisodeConfig { mode: SimMode::Nonreactive, ..EpisodeConfig::default() };
                let (r, t) = run_episode_traced(&w, "s", &mut ExpertReplay, &cfg).unwrap();
                assert_eq!(r.steps, EPISODE_STEPS);
                assert_eq!(t.ego.len(), EPISODE_STEPS + 1);
                let m = r.metrics;
                assert_eq!(m.at_fault_collision_free, 1.0, "{kind} {seed}");
                assert_eq!(m.drivable_compliance, 1.0, "{kind} {seed}");
                assert!((m.progress_ratio - 1.0).abs() < 1e-6, "{kind} {seed}");
                assert_eq!(m.comfort_ok, 1.0, "{kind} {seed}");
                assert_eq!(m.speed_compliance, 1.0, "{kind} {seed}");
                assert_eq!(m.direction_compliance, 1.0, "{kind} {seed}");
            }
        }
    }

    #[test]
    fn reactive_matches_log_under_expert() {
        for kind in ScenarioKind::ALL {
            let w = generate_scenario(kind, 5).unwrap();
            let a = run_episode(&w, "s", &mut ExpertReplay, &EpisodeConfig { mode: SimMode::Reactive, ..EpisodeConfig::default() }).unwrap();
            let b = run_episode(&w, "s", &mut ExpertReplay, &EpisodeConfig { mode: SimMode::Nonreactive, ..EpisodeConfig::default() }).unwrap();
            assert_eq!(a.metrics, b.metrics, "{kind}");
        }
    }

    struct Broken;
    impl EgoPlanner for Broken {
        fn label(&self) -> String {
            "broken".into()
        }
        fn reset(&mut self) -> Result<()> {
            Ok(())
        }
        fn plan(&mut self, _: &ScenarioWorld, _: &SceneView, frame: usize) -> Result<StepPlan> {
            Ok(StepPlan { frame, world: vec![], selected: None, scores: vec![] })
        }
    }

    #[test]
    fn empty_plan_marks_failure() {
        let w = generate_scenario(ScenarioKind::Straight, 1).unwrap();
        let r = run_episode(&w, "s", &mut Broken, &EpisodeConfig::default()).unwrap();
        assert!(r.failed);
        assert_eq!(r.metrics.progress_ratio, 0.0);
        assert!(r.error.unwrap().contains("empty plan"));
    }
}
