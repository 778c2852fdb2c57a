//! Pads a list of feature bundles into dense tensors with masks.
//!
//! Every block keeps at least one (masked) slot so no tensor has a zero-sized axis.

use candle_core::Tensor;

use crate::error::{LhpfError, Result};
use crate::features::{FeatureBundle, Role, AGENT_CHANNELS, EGO_KINEMATICS, OBSTACLE_CHANNELS, POLYLINE_ATTRS, POLYLINE_CHANNELS};
use crate::nn::tensor_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchLayout {
    pub agents: usize,
    pub obstacles: usize,
    pub polylines: usize,
    pub ref_lines: usize,
    pub steps: usize,
    pub points: usize,
}

impl BatchLayout {
    pub fn tokens(&self) -> usize {
        1 + self.agents + self.obstacles + self.polylines
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub layout: BatchLayout,
    /// `[B, A, T-1, 8]`
    pub agents: Tensor,
    /// `[B, A, T-1]`
    pub agent_step_mask: Tensor,
    /// `[B, A]`
    pub agent_mask: Tensor,
    /// `[B, 5]`
    pub ego_kinematics: Tensor,
    /// `[B, S, 5]`
    pub obstacles: Tensor,
    pub obstacle_mask: Tensor,
    /// `[B, P, n_p, 8]`
    pub polylines: Tensor,
    /// `[B, P, 5]`
    pub polyline_attrs: Tensor,
    pub polyline_mask: Tensor,
    /// `[B, N, 2]` with N = 1 + A + S + P
    pub token_positions: Tensor,
    /// `[B, N]`
    pub token_mask: Tensor,
    /// Role per token slot, shared by the whole batch.
    pub token_roles: Vec<u32>,
    /// `[B, R, n_p, 8]`
    pub ref_lines: Tensor,
    pub ref_attrs: Tensor,
    /// `[B, R, 2]`
    pub ref_anchors: Tensor,
    /// `[B, R]`
    pub ref_mask: Tensor,
    /// Reference-line id per (sample, slot); `None` for padding.
    pub ref_ids: Vec<Vec<Option<usize>>>,
}

fn bool_f(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Batch {
    pub fn collate(bundles: &[&FeatureBundle]) -> Result<Batch> {
        let b = bundles.len();
        if b == 0 {
            return Err(LhpfError::InvalidArgument("cannot collate an empty batch".into()));
        }
        let steps = bundles[0].agent_features.dim().1;
        let points = bundles[0].polyline_features.dim().1.max(bundles[0].ref_line_features.dim().1);
        if bundles.iter().any(|x| x.agent_features.dim().1 != steps) {
            return Err(LhpfError::InvalidArgument("bundles disagree on history length".into()));
        }
        let layout = BatchLayout {
            agents: bundles.iter().map(|x| x.num_agents()).max().unwrap_or(0).max(1),
            obstacles: bundles.iter().map(|x| x.num_obstacles()).max().unwrap_or(0).max(1),
            polylines: bundles.iter().map(|x| x.num_polylines()).max().unwrap_or(0).max(1),
            ref_lines: bundles.iter().map(|x| x.num_ref_lines()).max().unwrap_or(0).max(1),
            steps,
            points,
        };
        let BatchLayout { agents: a, obstacles: s, polylines: p, ref_lines: r, .. } = layout;
        let n = layout.tokens();

        let mut agents = vec![0.0; b * a * steps * AGENT_CHANNELS];
        let mut agent_step_mask = vec![0.0; b * a * steps];
        let mut agent_mask = vec![0.0; b * a];
        let mut ego = vec![0.0; b * EGO_KINEMATICS];
        let mut obstacles = vec![0.0; b * s * OBSTACLE_CHANNELS];
        let mut obstacle_mask = vec![0.0; b * s];
        let mut polylines = vec![0.0; b * p * points * POLYLINE_CHANNELS];
        let mut polyline_attrs = vec![0.0; b * p * POLYLINE_ATTRS];
        let mut polyline_mask = vec![0.0; b * p];
        let mut token_positions = vec![0.0; b * n * 2];
        let mut token_mask = vec![0.0; b * n];
        let mut ref_lines = vec![0.0; b * r * points * POLYLINE_CHANNELS];
        let mut ref_attrs = vec![0.0; b * r * POLYLINE_ATTRS];
        let mut ref_anchors = vec![0.0; b * r * 2];
        let mut ref_mask = vec![0.0; b * r];
        let mut ref_ids = Vec::with_capacity(b);

        for (bi, x) in bundles.iter().enumerate() {
            for ai in 0..x.num_agents() {
                let has = x.agent_has_data(ai);
                agent_mask[bi * a + ai] = bool_f(has);
                for t in 0..steps {
                    let base = ((bi * a + ai) * steps + t) * AGENT_CHANNELS;
                    for c in 0..AGENT_CHANNELS {
                        agents[base + c] = x.agent_features[[ai + 1, t, c]];
                    }
                    agent_step_mask[(bi * a + ai) * steps + t] = x.agent_features[[ai + 1, t, AGENT_CHANNELS - 1]];
                }
            }
            for c in 0..EGO_KINEMATICS {
                ego[bi * EGO_KINEMATICS + c] = x.ego_kinematics[c];
            }
            for si in 0..x.num_obstacles() {
                obstacle_mask[bi * s + si] = 1.0;
                for c in 0..OBSTACLE_CHANNELS {
                    obstacles[(bi * s + si) * OBSTACLE_CHANNELS + c] = x.obstacle_features[[si, c]];
                }
            }
            for pi in 0..x.num_polylines() {
                polyline_mask[bi * p + pi] = 1.0;
                for k in 0..points {
                    for c in 0..POLYLINE_CHANNELS {
                        polylines[((bi * p + pi) * points + k) * POLYLINE_CHANNELS + c] = x.polyline_features[[pi, k, c]];
                    }
                }
                for c in 0..POLYLINE_ATTRS {
                    polyline_attrs[(bi * p + pi) * POLYLINE_ATTRS + c] = x.polyline_attrs[[pi, c]];
                }
            }
            let mut ids = vec![None; r];
            for ri in 0..x.num_ref_lines() {
                ref_mask[bi * r + ri] = 1.0;
                ids[ri] = Some(x.ref_line_ids[ri]);
                for k in 0..points {
                    for c in 0..POLYLINE_CHANNELS {
                        ref_lines[((bi * r + ri) * points + k) * POLYLINE_CHANNELS + c] = x.ref_line_features[[ri, k, c]];
                    }
                }
                for c in 0..POLYLINE_ATTRS {
                    ref_attrs[(bi * r + ri) * POLYLINE_ATTRS + c] = x.ref_line_attrs[[ri, c]];
                }
                for c in 0..2 {
                    ref_anchors[(bi * r + ri) * 2 + c] = x.ref_line_anchors[[ri, c]];
                }
            }
            ref_ids.push(ids);

            // token slots: ego | agents (padded to A) | obstacles (to S) | map (to P)
            let mut put = |slot: usize, src_row: usize, valid: bool| {
                token_mask[bi * n + slot] = bool_f(valid);
                token_positions[(bi * n + slot) * 2] = x.token_positions[[src_row, 0]];
                token_positions[(bi * n + slot) * 2 + 1] = x.token_positions[[src_row, 1]];
            };
            put(0, 0, true);
            for ai in 0..x.num_agents() {
                put(1 + ai, 1 + ai, x.agent_has_data(ai));
            }
            for si in 0..x.num_obstacles() {
                put(1 + a + si, 1 + x.num_agents() + si, true);
            }
            for pi in 0..x.num_polylines() {
                put(1 + a + s + pi, 1 + x.num_agents() + x.num_obstacles() + pi, true);
            }
        }

        let mut token_roles = vec![Role::Ego as u32];
        token_roles.extend(std::iter::repeat_n(Role::Agent as u32, a));
        token_roles.extend(std::iter::repeat_n(Role::Obstacle as u32, s));
        token_roles.extend(std::iter::repeat_n(Role::Map as u32, p));

        Ok(Batch {
            size: b,
            layout,
            agents: tensor_from(agents, &[b, a, steps, AGENT_CHANNELS])?,
            agent_step_mask: tensor_from(agent_step_mask, &[b, a, steps])?,
            agent_mask: tensor_from(agent_mask, &[b, a])?,
            ego_kinematics: tensor_from(ego, &[b, EGO_KINEMATICS])?,
            obstacles: tensor_from(obstacles, &[b, s, OBSTACLE_CHANNELS])?,
            obstacle_mask: tensor_from(obstacle_mask, &[b, s])?,
            polylines: tensor_from(polylines, &[b, p, points, POLYLINE_CHANNELS])?,
            polyline_attrs: tensor_from(polyline_attrs, &[b, p, POLYLINE_ATTRS])?,
            polyline_mask: tensor_from(polyline_mask, &[b, p])?,
            token_positions: tensor_from(token_positions, &[b, n, 2])?,
            token_mask: tensor_from(token_mask, &[b, n])?,
            token_roles,
            ref_lines: tensor_from(ref_lines, &[b, r, points, POLYLINE_CHANNELS])?,
            ref_attrs: tensor_from(ref_attrs, &[b, r, POLYLINE_ATTRS])?,
            ref_anchors: tensor_from(ref_anchors, &[b, r, 2])?,
            ref_mask: tensor_from(ref_mask, &[b, r])?,
            ref_ids,
        })
    }
}
