//! Supervision targets from the expert horizon.

use crate::error::{LhpfError, Result};
use crate::geometry::{project, Pose2};
use crate::losses::comfort::TrajPoint;
use crate::scenario::{AgentState, Polyline};

/// Length of the reference-line segment ahead of the ego that longitudinal modes partition.
pub const REF_LINE_SPAN: f64 = 120.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    /// Expert horizon in the ego frame at `t_now`.
    pub trajectory: Vec<TrajPoint>,
    pub ref_index: usize,
    pub lon_index: usize,
}

impl Target {
    pub fn flat_index(&self, n_lon: usize) -> usize {
        self.ref_index * n_lon + self.lon_index
    }
}

pub fn to_ego_point(pose: &Pose2, s: &AgentState) -> TrajPoint {
    let p = pose.to_local(s.position);
    let h = pose.heading_to_local(s.heading);
    let v = pose.dir_to_local(s.velocity);
    [p.x, p.y, h.cos(), h.sin(), v.x, v.y]
}

/// Nearest reference line by the lateral offset of the final expert point; longitudinal
/// mode from the terminal progress along that line as a fraction of the span ahead.
pub fn project_target(horizon: &[AgentState], ego_now: &AgentState, ref_lines: &[Polyline], n_lon: usize) -> Result<Target> {
    if ref_lines.is_empty() {
        return Err(LhpfError::InvalidArgument("target projection needs a reference line".into()));
    }
    if n_lon == 0 {
        return Err(LhpfError::InvalidArgument("need at least one longitudinal mode".into()));
    }
    let last = horizon.last().ok_or_else(|| LhpfError::InvalidArgument("empty expert horizon".into()))?;
    let ref_index = ref_lines
        .iter()
        .enumerate()
        .map(|(i, l)| (i, project(&l.points, last.position).lateral.abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("non-empty");
    let line = &ref_lines[ref_index].points;
    let s_start = project(line, ego_now.position).arc_length;
    let s_end = project(line, last.position).arc_length;
    let span = REF_LINE_SPAN.min(crate::geometry::arc_length(line) - s_start).max(1e-6);
    let fraction = ((s_end - s_start) / span).max(0.0);
    let lon_index = ((fraction * n_lon as f64).floor() as usize).min(n_lon - 1);
    let pose = Pose2::new(ego_now.position, ego_now.heading);
    Ok(Target { trajectory: horizon.iter().map(|s| to_ego_point(&pose, s)).collect(), ref_index, lon_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::scenario::{BBox, PolylineKind};

    fn line(y: f64, len: f64) -> Polyline {
        Polyline::with_half_width(
            vec![Vec2::new(0.0, y), Vec2::new(len * 0.5, y), Vec2::new(len, y)],
            1.8,
            10.0,
            PolylineKind::RouteReference,
        )
    }

    fn drive(y: f64, from: f64, to: f64, n: usize) -> Vec<AgentState> {
        (1..=n)
            .map(|i| {
                let x = from + (to - from) * i as f64 / n as f64;
                AgentState::new(Vec2::new(x, y), 0.0, Vec2::new(1.0, 0.0), BBox::new(4.6, 2.0))
            })
            .collect()
    }

    #[test]
    fn picks_line_driven_on() {
        let lines = [line(-3.6, 300.0), line(0.0, 300.0), line(3.6, 300.0)];
        let h = drive(0.0, 10.0, 60.0, 80);
        let now = AgentState::new(Vec2::new(10.0, 0.0), 0.0, Vec2::new(1.0, 0.0), BBox::new(4.6, 2.0));
        assert_eq!(project_target(&h, &now, &lines, 4).unwrap().ref_index, 1);
    }

    #[test]
    fn stationary_expert_bucket_zero() {
        let lines = [line(0.0, 300.0), line(3.6, 300.0)];
        let now = AgentState::new(Vec2::new(10.0, 3.0), 0.0, Vec2::ZERO, BBox::new(4.6, 2.0));
        let h = vec![now; 80];
        let t = project_target(&h, &now, &lines, 4).unwrap();
        assert_eq!((t.ref_index, t.lon_index), (1, 0));
    }

    #[test]
    fn three_quarters_along_80m_line() {
        let lines = [line(0.0, 80.0)];
        let now = AgentState::new(Vec2::new(0.0, 0.0), 0.0, Vec2::ZERO, BBox::new(4.6, 2.0));
        let h = drive(0.0, 0.0, 60.0, 80);
        assert_eq!(project_target(&h, &now, &lines, 4).unwrap().lon_index, 3);
    }

    #[test]
    fn target_is_in_ego_frame() {
        let lines = [line(0.0, 300.0)];
        let now = AgentState::new(Vec2::new(5.0, 0.0), 0.0, Vec2::new(1.0, 0.0), BBox::new(4.6, 2.0));
        let h = drive(0.0, 5.0, 15.0, 10);
        let t = project_target(&h, &now, &lines, 4).unwrap();
        assert!((t.trajectory[9][0] - 10.0).abs() < 1e-12);
        assert_eq!(t.trajectory[0][2], 1.0);
    }
}
