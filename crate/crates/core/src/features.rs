//! Ego-centric feature arrays for the scene encoder.
//!
//! Everything is expressed in the ego frame at `t_now`: origin at the ego center,
//! x along the ego heading. Agent histories are differenced frame to frame.
//!
//! Channel layouts:
//! * agents `[N_A+1, T_H-1, 8]`: Δp_x, Δp_y, Δθ, Δv_x, Δv_y, length, width, valid. Row 0 is the ego.
//! * polylines `[N_P, n_p, 8]`: p_i-p_0, p_i-p_{i-1}, p_i-left_i, p_i-right_i (2 channels each).
//! * polyline attributes `[N_P, 5]`: lane, crosswalk, green, red, speed limit / 10.
//! * obstacles `[N_S, 5]`: p_x, p_y, θ, length, width.
//! * ego kinematics `[5]`: v_x, v_y, a_x, a_y, yaw rate.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::geometry::{arc_length, point_at, project, wrap_angle, Pose2, Vec2};
use crate::scenario::{AgentState, ObservationWindow, Polyline, PolylineKind, SignalState, StaticObstacle, DT};

pub const AGENT_CHANNELS: usize = 8;
pub const POLYLINE_CHANNELS: usize = 8;
pub const POLYLINE_ATTRS: usize = 5;
pub const OBSTACLE_CHANNELS: usize = 5;
pub const EGO_KINEMATICS: usize = 5;

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Ego = 0,
    Agent = 1,
    Obstacle = 2,
    Map = 3,
}

pub const NUM_ROLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub max_agents: usize,
    pub max_polylines: usize,
    pub max_obstacles: usize,
    pub polyline_points: usize,
    pub radius: f64,
    pub max_ref_lines: usize,
    /// Map polylines are cropped to this window around the ego's projection.
    pub crop_behind: f64,
    pub crop_ahead: f64,
    pub ref_line_span: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            max_agents: 32,
            max_polylines: 64,
            max_obstacles: 16,
            polyline_points: 20,
            radius: 120.0,
            max_ref_lines: 4,
            crop_behind: 30.0,
            crop_ahead: 90.0,
            ref_line_span: crate::losses::target::REF_LINE_SPAN,
        }
    }
}

/// What the planner may observe at one instant, whether cut from a log or from a simulation.
#[derive(Debug, Clone)]
pub struct SceneView<'a> {
    /// Oldest first, last entry is `t_now`.
    pub ego_history: &'a [AgentState],
    pub agent_histories: Vec<&'a [AgentState]>,
    pub map: &'a [Polyline],
    pub signals: &'a [SignalState],
    pub obstacles: &'a [StaticObstacle],
    pub reference_lines: &'a [Polyline],
}

impl<'a> SceneView<'a> {
    pub fn from_window(w: &ObservationWindow<'a>) -> Self {
        let s = w.scenario;
        SceneView {
            ego_history: w.ego_history(),
            agent_histories: s.agent_tracks.iter().map(|a| &a.states[w.history_range()]).collect(),
            map: &s.map,
            signals: &s.traffic_context,
            obstacles: &s.obstacles,
            reference_lines: &s.reference_lines,
        }
    }

    pub fn ego_now(&self) -> &AgentState {
        self.ego_history.last().expect("non-empty ego history")
    }

    pub fn ego_pose(&self) -> Pose2 {
        let e = self.ego_now();
        Pose2::new(e.position, e.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub agent_features: Array3<f64>,
    pub agent_valid: Array2<bool>,
    pub ego_kinematics: Array1<f64>,
    pub polyline_features: Array3<f64>,
    pub polyline_attrs: Array2<f64>,
    pub obstacle_features: Array2<f64>,
    /// `[1 + N_A + N_S + N_P, 2]`, in token order ego, agents, obstacles, map.
    pub token_positions: Array2<f64>,
    pub token_roles: Vec<Role>,
    pub ref_line_features: Array3<f64>,
    pub ref_line_attrs: Array2<f64>,
    /// First point of each cropped reference line.
    pub ref_line_anchors: Array2<f64>,
    pub ref_line_ids: Vec<usize>,
}

impl FeatureBundle {
    pub fn num_agents(&self) -> usize {
        self.agent_features.dim().0 - 1
    }

    pub fn num_obstacles(&self) -> usize {
        self.obstacle_features.dim().0
    }

    pub fn num_polylines(&self) -> usize {
        self.polyline_features.dim().0
    }

    pub fn num_ref_lines(&self) -> usize {
        self.ref_line_ids.len()
    }

    pub fn history_frames(&self) -> usize {
        self.agent_valid.dim().1
    }

    /// Agent rows (excluding the ego) with at least one valid frame.
    pub fn agent_has_data(&self, i: usize) -> bool {
        self.agent_valid.row(i + 1).iter().any(|v| *v)
    }

    pub fn is_finite(&self) -> bool {
        self.agent_features.iter().all(|v| v.is_finite())
            && self.ego_kinematics.iter().all(|v| v.is_finite())
            && self.polyline_features.iter().all(|v| v.is_finite())
            && self.polyline_attrs.iter().all(|v| v.is_finite())
            && self.obstacle_features.iter().all(|v| v.is_finite())
            && self.token_positions.iter().all(|v| v.is_finite())
            && self.ref_line_features.iter().all(|v| v.is_finite())
            && self.ref_line_anchors.iter().all(|v| v.is_finite())
    }
}

/// Sort key stable under rigid motions: distance rounded to a micrometer, then index.
fn distance_key(d: f64, i: usize) -> (i64, usize) {
    ((d * 1e6).round() as i64, i)
}

/// Differenced history of one agent, written into `out` (`[T_H-1, 8]`) and `valid` (`[T_H]`).
fn difference_track(
    pose: &Pose2,
    track: &[AgentState],
    mut out: ndarray::ArrayViewMut2<f64>,
    mut valid: ndarray::ArrayViewMut1<bool>,
) {
    for (t, s) in track.iter().enumerate() {
        valid[t] = s.observed;
    }
    for t in 0..track.len() - 1 {
        let (a, b) = (&track[t], &track[t + 1]);
        if !(a.observed && b.observed) {
            continue;
        }
        let dp = pose.dir_to_local(b.position - a.position);
        let dv = pose.dir_to_local(b.velocity - a.velocity);
        let row = [dp.x, dp.y, wrap_angle(b.heading - a.heading), dv.x, dv.y, b.bbox.length, b.bbox.width, 1.0];
        for (c, v) in row.into_iter().enumerate() {
            out[[t, c]] = v;
        }
    }
}

/// Differenced agent histories and validity; the ego is row 0.
pub fn build_agent_features(view: &SceneView, cfg: &FeatureConfig) -> (Array3<f64>, Array2<bool>, Vec<usize>) {
    let pose = view.ego_pose();
    let th = view.ego_history.len();
    let ego_pos = view.ego_now().position;
    let mut chosen: Vec<(usize, f64)> = view
        .agent_histories
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let now = h.last()?;
            let d = now.position.distance(ego_pos);
            (now.observed && d <= cfg.radius).then_some((i, d))
        })
        .collect();
    chosen.sort_by_key(|&(i, d)| distance_key(d, i));
    chosen.truncate(cfg.max_agents);
    let ids: Vec<usize> = chosen.iter().map(|(i, _)| *i).collect();

    let n = ids.len() + 1;
    let mut feats = Array3::zeros((n, th - 1, AGENT_CHANNELS));
    let mut valid = Array2::from_elem((n, th), false);
    let tracks = std::iter::once(view.ego_history).chain(ids.iter().map(|&i| view.agent_histories[i]));
    for (row, track) in tracks.enumerate() {
        difference_track(&pose, track, feats.slice_mut(ndarray::s![row, .., ..]), valid.slice_mut(ndarray::s![row, ..]));
    }
    (feats, valid, ids)
}

pub fn build_ego_kinematics(view: &SceneView) -> Array1<f64> {
    let pose = view.ego_pose();
    let h = view.ego_history;
    let now = h[h.len() - 1];
    let prev = if h.len() >= 2 { h[h.len() - 2] } else { now };
    let v = pose.dir_to_local(now.velocity);
    let a = pose.dir_to_local(now.velocity - prev.velocity) * (1.0 / DT);
    let yaw_rate = wrap_angle(now.heading - prev.heading) / DT;
    Array1::from(vec![v.x, v.y, a.x, a.y, yaw_rate])
}

/// Cuts `[s0, s1]` out of a polyline and resamples centerline and boundaries to `n` points.
fn crop_polyline(line: &Polyline, s0: f64, s1: f64, n: usize) -> (Vec<Vec2>, Vec<Vec2>, Vec<Vec2>) {
    let len = arc_length(&line.points);
    let left_scale = arc_length(&line.left_boundary) / len;
    let right_scale = arc_length(&line.right_boundary) / len;
    let mut c = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        let s = s0 + (s1 - s0) * i as f64 / (n - 1) as f64;
        c.push(point_at(&line.points, s).0);
        l.push(point_at(&line.left_boundary, s * left_scale).0);
        r.push(point_at(&line.right_boundary, s * right_scale).0);
    }
    (c, l, r)
}

fn polyline_point_features(pose: &Pose2, c: &[Vec2], l: &[Vec2], r: &[Vec2], mut out: ndarray::ArrayViewMut2<f64>) {
    for i in 0..c.len() {
        let d0 = pose.dir_to_local(c[i] - c[0]);
        let d1 = if i == 0 { Vec2::ZERO } else { pose.dir_to_local(c[i] - c[i - 1]) };
        let dl = pose.dir_to_local(c[i] - l[i]);
        let dr = pose.dir_to_local(c[i] - r[i]);
        for (k, v) in [d0.x, d0.y, d1.x, d1.y, dl.x, dl.y, dr.x, dr.y].into_iter().enumerate() {
            out[[i, k]] = v;
        }
    }
}

fn polyline_attrs(line: &Polyline, signal: SignalState) -> [f64; POLYLINE_ATTRS] {
    let is = |b: bool| if b { 1.0 } else { 0.0 };
    [
        is(line.kind != PolylineKind::Crosswalk),
        is(line.kind == PolylineKind::Crosswalk),
        is(signal == SignalState::Green),
        is(signal == SignalState::Red),
        line.speed_limit / 10.0,
    ]
}

struct CroppedLine {
    features: Array2<f64>,
    attrs: [f64; POLYLINE_ATTRS],
    /// Ego-frame position of the cropped point closest to the ego.
    nearest: Vec2,
    first: Vec2,
}

fn crop_and_featurize(pose: &Pose2, line: &Polyline, signal: SignalState, s0: f64, s1: f64, n: usize) -> CroppedLine {
    let (c, l, r) = crop_polyline(line, s0, s1, n);
    let mut features = Array2::zeros((n, POLYLINE_CHANNELS));
    polyline_point_features(pose, &c, &l, &r, features.view_mut());
    let foot = project(&c, pose.origin).foot;
    CroppedLine { features, attrs: polyline_attrs(line, signal), nearest: pose.to_local(foot), first: pose.to_local(c[0]) }
}

/// Map polylines within the radius, cropped around the ego and resampled.
fn build_map(view: &SceneView, cfg: &FeatureConfig) -> Vec<CroppedLine> {
    let pose = view.ego_pose();
    let ego = pose.origin;
    let mut chosen: Vec<(usize, f64, f64)> = view
        .map
        .iter()
        .enumerate()
        .filter_map(|(i, line)| {
            let pr = project(&line.points, ego);
            let d = pr.foot.distance(ego);
            (d <= cfg.radius).then_some((i, d, pr.arc_length))
        })
        .collect();
    chosen.sort_by_key(|&(i, d, _)| distance_key(d, i));
    chosen.truncate(cfg.max_polylines);
    chosen
        .into_iter()
        .filter_map(|(i, _, s)| {
            let line = &view.map[i];
            let len = arc_length(&line.points);
            let s0 = (s - cfg.crop_behind).max(0.0);
            let s1 = (s + cfg.crop_ahead).min(len);
            (s1 - s0 > 1e-3).then(|| {
                crop_and_featurize(&pose, line, view.signals.get(i).copied().unwrap_or(SignalState::None), s0, s1, cfg.polyline_points)
            })
        })
        .collect()
}

/// Reference lines in scenario order, cropped to the span ahead of the ego's projection.
fn build_ref_lines(view: &SceneView, cfg: &FeatureConfig) -> Vec<CroppedLine> {
    let pose = view.ego_pose();
    view.reference_lines
        .iter()
        .take(cfg.max_ref_lines)
        .map(|line| {
            let len = arc_length(&line.points);
            let s = project(&line.points, pose.origin).arc_length;
            let s1 = (s + cfg.ref_line_span).min(len);
            let s0 = s.min(s1 - 1.0).max(0.0);
            crop_and_featurize(&pose, line, SignalState::None, s0, s1, cfg.polyline_points)
        })
        .collect()
}

pub fn build_obstacle_features(view: &SceneView, cfg: &FeatureConfig) -> Array2<f64> {
    let pose = view.ego_pose();
    let mut chosen: Vec<(usize, f64)> = view
        .obstacles
        .iter()
        .enumerate()
        .map(|(i, o)| (i, o.position.distance(pose.origin)))
        .filter(|(_, d)| *d <= cfg.radius)
        .collect();
    chosen.sort_by_key(|&(i, d)| distance_key(d, i));
    chosen.truncate(cfg.max_obstacles);
    let mut out = Array2::zeros((chosen.len(), OBSTACLE_CHANNELS));
    for (row, (i, _)) in chosen.iter().enumerate() {
        let o = &view.obstacles[*i];
        let p = pose.to_local(o.position);
        let vals = [p.x, p.y, pose.heading_to_local(o.heading), o.bbox.length, o.bbox.width];
        for (c, v) in vals.into_iter().enumerate() {
            out[[row, c]] = v;
        }
    }
    out
}

pub fn build_polyline_features(view: &SceneView, cfg: &FeatureConfig) -> Array3<f64> {
    stack_lines(&build_map(view, cfg), cfg.polyline_points).0
}

fn stack_lines(lines: &[CroppedLine], n: usize) -> (Array3<f64>, Array2<f64>) {
    let mut f = Array3::zeros((lines.len(), n, POLYLINE_CHANNELS));
    let mut a = Array2::zeros((lines.len(), POLYLINE_ATTRS));
    for (i, l) in lines.iter().enumerate() {
        f.slice_mut(ndarray::s![i, .., ..]).assign(&l.features);
        for (k, v) in l.attrs.iter().enumerate() {
            a[[i, k]] = *v;
        }
    }
    (f, a)
}

fn shift_state(s: &AgentState, by: Vec2) -> AgentState {
    AgentState { position: s.position - by, ..*s }
}

fn shift_line(l: &Polyline, by: Vec2) -> Polyline {
    let shift = |pts: &[Vec2]| pts.iter().map(|&p| p - by).collect();
    Polyline { points: shift(&l.points), left_boundary: shift(&l.left_boundary), right_boundary: shift(&l.right_boundary), ..*l }
}

/// Full ego-frame bundle for one planning instant. Geometry is first re-centred on the ego
/// position so every later step sees the same numbers wherever the scene sits in the world.
pub fn to_ego_frame(view: &SceneView, cfg: &FeatureConfig) -> FeatureBundle {
    let by = view.ego_now().position;
    let ego: Vec<AgentState> = view.ego_history.iter().map(|s| shift_state(s, by)).collect();
    let agents: Vec<Vec<AgentState>> = view.agent_histories.iter().map(|h| h.iter().map(|s| shift_state(s, by)).collect()).collect();
    let map: Vec<Polyline> = view.map.iter().map(|l| shift_line(l, by)).collect();
    let refs: Vec<Polyline> = view.reference_lines.iter().map(|l| shift_line(l, by)).collect();
    let obstacles: Vec<StaticObstacle> = view.obstacles.iter().map(|o| StaticObstacle { position: o.position - by, ..*o }).collect();
    let centred = SceneView {
        ego_history: &ego,
        agent_histories: agents.iter().map(|h| h.as_slice()).collect(),
        map: &map,
        signals: view.signals,
        obstacles: &obstacles,
        reference_lines: &refs,
    };
    featurize(&centred, cfg)
}

fn featurize(view: &SceneView, cfg: &FeatureConfig) -> FeatureBundle {
    let pose = view.ego_pose();
    let (agent_features, agent_valid, agent_ids) = build_agent_features(view, cfg);
    let obstacle_features = build_obstacle_features(view, cfg);
    let map = build_map(view, cfg);
    let refs = build_ref_lines(view, cfg);
    let (polyline_features, polyline_attrs) = stack_lines(&map, cfg.polyline_points);
    let (ref_line_features, ref_line_attrs) = stack_lines(&refs, cfg.polyline_points);

    let n_tokens = 1 + agent_ids.len() + obstacle_features.dim().0 + map.len();
    let mut token_positions = Array2::zeros((n_tokens, 2));
    let mut token_roles = Vec::with_capacity(n_tokens);
    token_roles.push(Role::Ego);
    let mut row = 1;
    for &i in &agent_ids {
        let p = pose.to_local(view.agent_histories[i].last().expect("history").position);
        token_positions[[row, 0]] = p.x;
        token_positions[[row, 1]] = p.y;
        token_roles.push(Role::Agent);
        row += 1;
    }
    for o in obstacle_features.rows() {
        token_positions[[row, 0]] = o[0];
        token_positions[[row, 1]] = o[1];
        token_roles.push(Role::Obstacle);
        row += 1;
    }
    for l in &map {
        token_positions[[row, 0]] = l.nearest.x;
        token_positions[[row, 1]] = l.nearest.y;
        token_roles.push(Role::Map);
        row += 1;
    }
    let mut ref_line_anchors = Array2::zeros((refs.len(), 2));
    for (i, l) in refs.iter().enumerate() {
        ref_line_anchors[[i, 0]] = l.first.x;
        ref_line_anchors[[i, 1]] = l.first.y;
    }

    FeatureBundle {
        agent_features,
        agent_valid,
        ego_kinematics: build_ego_kinematics(view),
        polyline_features,
        polyline_attrs,
        obstacle_features,
        token_positions,
        token_roles,
        ref_line_features,
        ref_line_attrs,
        ref_line_anchors,
        ref_line_ids: (0..refs.len()).collect(),
    }
}

pub fn window_features(w: &ObservationWindow, cfg: &FeatureConfig) -> FeatureBundle {
    to_ego_frame(&SceneView::from_window(w), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, BBox, ScenarioKind};

    fn view_of<'a>(ego: &'a [AgentState], agents: Vec<&'a [AgentState]>, map: &'a [Polyline], obstacles: &'a [StaticObstacle]) -> SceneView<'a> {
        SceneView { ego_history: ego, agent_histories: agents, map, signals: &[], obstacles, reference_lines: map }
    }

    fn ego_track(n: usize) -> Vec<AgentState> {
        (0..n).map(|t| AgentState::new(Vec2::new(t as f64, 0.0), 0.0, Vec2::new(10.0, 0.0), BBox::new(4.6, 2.0))).collect()
    }

    fn lane_x(w: f64) -> Polyline {
        Polyline::with_half_width((0..30).map(|i| Vec2::new(i as f64 * 5.0 - 20.0, 0.0)).collect(), 0.5 * w, 10.0, PolylineKind::Lane)
    }

    #[test]
    fn stationary_agent_has_zero_deltas() {
        let ego = ego_track(20);
        let parked = vec![AgentState::new(Vec2::new(5.0, 3.0), 0.4, Vec2::ZERO, BBox::new(4.0, 1.8)); 20];
        let map = [lane_x(3.6)];
        let v = view_of(&ego, vec![&parked], &map, &[]);
        let (f, valid, _) = build_agent_features(&v, &FeatureConfig::default());
        assert_eq!(f.dim(), (2, 19, 8));
        for t in 0..19 {
            for c in 0..5 {
                assert_eq!(f[[1, t, c]], 0.0);
            }
            assert_eq!((f[[1, t, 5]], f[[1, t, 6]], f[[1, t, 7]]), (4.0, 1.8, 1.0));
        }
        assert!(valid.row(1).iter().all(|v| *v));
    }

    #[test]
    fn heading_wrap_in_differences() {
        let ego = ego_track(20);
        let crossing: Vec<AgentState> = (0..20)
            .map(|t| {
                let h = std::f64::consts::PI - 0.05 + 0.01 * t as f64;
                AgentState::new(Vec2::new(t as f64, 5.0), h, Vec2::new(1.0, 0.0), BBox::new(4.0, 1.8))
            })
            .collect();
        let map = [lane_x(3.6)];
        let v = view_of(&ego, vec![&crossing], &map, &[]);
        let (f, _, _) = build_agent_features(&v, &FeatureConfig::default());
        for t in 0..19 {
            let oracle = {
                let d = crossing[t + 1].heading - crossing[t].heading;
                d - (2.0 * std::f64::consts::PI) * ((d + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)).floor()
            };
            assert!(f[[1, t, 2]].abs() < std::f64::consts::PI);
            assert!((f[[1, t, 2]] - oracle).abs() < 1e-12);
            assert!((f[[1, t, 0]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_frames_are_zeroed() {
        let ego = ego_track(20);
        let mut ghost = vec![AgentState::new(Vec2::new(8.0, 3.0), 0.0, Vec2::new(1.0, 0.0), BBox::new(4.0, 1.8)); 20];
        ghost[7] = AgentState::unobserved();
        let map = [lane_x(3.6)];
        let v = view_of(&ego, vec![&ghost], &map, &[]);
        let (f, valid, _) = build_agent_features(&v, &FeatureConfig::default());
        assert!(!valid[[1, 7]]);
        for t in [6, 7] {
            assert!(f.slice(ndarray::s![1, t, ..]).iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn lane_boundary_channels() {
        let ego = ego_track(20);
        let map = [lane_x(3.6)];
        let v = view_of(&ego, vec![], &map, &[]);
        let f = build_polyline_features(&v, &FeatureConfig::default());
        assert_eq!(f.dim(), (1, 20, 8));
        for i in 0..20 {
            assert!((f[[0, i, 4]]).abs() < 1e-12 && (f[[0, i, 5]] + 1.8).abs() < 1e-12);
            assert!((f[[0, i, 6]]).abs() < 1e-12 && (f[[0, i, 7]] - 1.8).abs() < 1e-12);
        }
        for c in 0..4 {
            assert_eq!(f[[0, 0, c]], 0.0);
        }
    }

    #[test]
    fn obstacle_in_rotated_ego_frame() {
        let ego: Vec<AgentState> = (0..20)
            .map(|_| AgentState::new(Vec2::new(3.0, 4.0), std::f64::consts::FRAC_PI_2, Vec2::ZERO, BBox::new(4.6, 2.0)))
            .collect();
        let obs = [
            StaticObstacle { position: Vec2::new(3.0, 14.0), heading: std::f64::consts::FRAC_PI_2, bbox: BBox::new(4.0, 2.0) },
            StaticObstacle { position: Vec2::new(3.0, 4.0), heading: std::f64::consts::FRAC_PI_2, bbox: BBox::new(4.0, 2.0) },
        ];
        let map = [lane_x(3.6)];
        let v = view_of(&ego, vec![], &map, &obs);
        let f = build_obstacle_features(&v, &FeatureConfig::default());
        // nearest first
        let at_ego = f.row(0).to_vec();
        assert!(at_ego[0].abs() < 1e-12 && at_ego[1].abs() < 1e-12 && at_ego[2].abs() < 1e-12);
        let ahead = f.row(1).to_vec();
        assert!((ahead[0] - 10.0).abs() < 1e-12 && ahead[1].abs() < 1e-12);
        let none = build_obstacle_features(&view_of(&ego, vec![], &map, &[]), &FeatureConfig::default());
        assert_eq!(none.dim(), (0, 5));
    }

    #[test]
    fn ego_token_at_origin_and_shapes() {
        let s = generate_scenario(ScenarioKind::DenseTraffic, 2).unwrap();
        let w = s.slice_window(40).unwrap();
        let b = window_features(&w, &FeatureConfig::default());
        assert_eq!(b.token_positions.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(b.token_roles.len(), 1 + b.num_agents() + b.num_obstacles() + b.num_polylines());
        assert_eq!(b.agent_features.dim().1, 19);
        assert_eq!(b.num_ref_lines(), 3);
        assert!(b.is_finite());
    }
}
