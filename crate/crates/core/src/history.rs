//! Historical intention pool, query fusion and step-wise inference.

use std::collections::BTreeMap;
use std::str::FromStr;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{LhpfError, Result};
use crate::features::{to_ego_frame, FeatureBundle, SceneView};
use crate::model::{Batch, PlanResult, Planner};
use crate::nn::{tensor_from, ForwardCtx, Init, Linear, MultiHeadAttention, ParamStore, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Sum,
    Attention,
}

impl FromStr for FusionMode {
    type Err = LhpfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(FusionMode::Sum),
            "attention" | "attn" => Ok(FusionMode::Attention),
            _ => Err(LhpfError::InvalidArgument(format!("unknown fusion mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Sum => "sum",
            FusionMode::Attention => "attention",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub projection_dim: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { mode: FusionMode::Sum, projection_dim: 128 }
    }
}

/// Where second-phase training gets its pool from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolTrainingMode {
    /// The current embedding repeated once per pool slot.
    #[default]
    Duplicate,
    /// Backbone embeddings recomputed at the logged past grid frames.
    Logged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryConfig {
    pub capacity_frames: usize,
    pub interval: usize,
    pub fusion: FusionConfig,
    pub training_pool: PoolTrainingMode,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        HistoryConfig { capacity_frames: 20, interval: 10, fusion: FusionConfig::default(), training_pool: PoolTrainingMode::Duplicate }
    }
}

impl HistoryConfig {
    pub fn validate(&self, hidden_dim: usize) -> Result<()> {
        if self.capacity_frames == 0 || self.interval == 0 {
            return Err(LhpfError::InvalidArgument("history capacity_frames and interval must be positive".into()));
        }
        if self.fusion.projection_dim != hidden_dim {
            return Err(LhpfError::InvalidArgument(format!(
                "fusion.projection_dim {} must equal hidden_dim {hidden_dim}",
                self.fusion.projection_dim
            )));
        }
        Ok(())
    }

    /// Largest number of entries the pool can hold.
    pub fn max_entries(&self) -> usize {
        self.capacity_frames.div_ceil(self.interval)
    }
}

/// Decoder output `[N_R, N_L, D]` for the valid reference lines of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningEmbedding {
    pub t_frame: usize,
    pub ref_line_ids: Vec<usize>,
    pub lon_modes: usize,
    pub dim: usize,
    /// Row-major `[N_R, N_L, D]`.
    pub values: Vec<f64>,
}

impl PlanningEmbedding {
    /// Takes sample `b` of a `[B, R, L, D]` embedding, dropping padded lines.
    pub fn from_batch(embedding: &Tensor, batch: &Batch, b: usize, t_frame: usize) -> Result<Self> {
        let (_, _, l, d) = embedding.dims4()?;
        let ids: Vec<usize> = batch.ref_ids[b].iter().flatten().copied().collect();
        let values = embedding.narrow(0, b, 1)?.narrow(1, 0, ids.len())?.flatten_all()?.to_vec1()?;
        Ok(PlanningEmbedding { t_frame, ref_line_ids: ids, lon_modes: l, dim: d, values })
    }

    fn row(&self, id: usize) -> Option<&[f64]> {
        let stride = self.lon_modes * self.dim;
        self.ref_line_ids.iter().position(|&x| x == id).map(|r| &self.values[r * stride..(r + 1) * stride])
    }
}

/// Planning embeddings stored on the interval grid within the last `capacity_frames`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPool {
    pub capacity_frames: usize,
    pub interval: usize,
    entries: BTreeMap<usize, PlanningEmbedding>,
    #[serde(default)]
    last_push: Option<usize>,
}

impl HistoryPool {
    pub fn new(capacity_frames: usize, interval: usize) -> Result<Self> {
        if capacity_frames == 0 || interval == 0 {
            return Err(LhpfError::InvalidArgument("pool capacity and interval must be positive".into()));
        }
        Ok(HistoryPool { capacity_frames, interval, entries: BTreeMap::new(), last_push: None })
    }

    pub fn from_config(cfg: &HistoryConfig) -> Result<Self> {
        Self::new(cfg.capacity_frames, cfg.interval)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frames(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = &PlanningEmbedding> {
        self.entries.values()
    }

    pub fn max_entries(&self) -> usize {
        self.capacity_frames.div_ceil(self.interval)
    }

    /// Evicts entries older than `capacity_frames` relative to `t_frame`, then stores `pe`
    /// if `t_frame` is on the grid. Returns whether it was stored.
    pub fn push(&mut self, pe: PlanningEmbedding) -> Result<bool> {
        let t = pe.t_frame;
        if let Some(last) = self.last_push {
            if t <= last {
                return Err(LhpfError::Ordering(format!("push at frame {t} after frame {last}")));
            }
        }
        self.last_push = Some(t);
        while let Some((&oldest, _)) = self.entries.first_key_value() {
            if t - oldest >= self.capacity_frames {
                self.entries.pop_first();
            } else {
                break;
            }
        }
        if t % self.interval == 0 {
            self.entries.insert(t, pe);
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Entries aligned to `ref_ids` (padded to `r_slots`), zero where a line was absent:
    /// `[K, r_slots, L, D]`, or `None` for an empty pool.
    pub fn aligned(&self, ref_ids: &[Option<usize>], lon_modes: usize, dim: usize) -> Result<Option<Tensor>> {
        if self.entries.is_empty() {
            return Ok(None);
        }
        let k = self.entries.len();
        let r = ref_ids.len();
        let stride = lon_modes * dim;
        let mut out = vec![0.0; k * r * stride];
        for (ki, e) in self.entries.values().enumerate() {
            if e.lon_modes != lon_modes || e.dim != dim {
                return Err(LhpfError::InvalidArgument(format!(
                    "pool entry at frame {} has shape [{}, {}], expected [{lon_modes}, {dim}]",
                    e.t_frame, e.lon_modes, e.dim
                )));
            }
            for (ri, id) in ref_ids.iter().enumerate() {
                if let Some(row) = id.and_then(|id| e.row(id)) {
                    let base = (ki * r + ri) * stride;
                    out[base..base + stride].copy_from_slice(row);
                }
            }
        }
        Ok(Some(tensor_from(out, &[k, r, lon_modes, dim])?))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| LhpfError::InvalidArgument(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LhpfError::parse("pool state", e.to_string()))
    }
}

/// Projection of `concat(Q_0, history)` back to `D`, with an optional attention reducer.
#[derive(Debug, Clone)]
pub struct Fusion {
    proj: Linear,
    attn: Option<MultiHeadAttention>,
    prefix: String,
    dim: usize,
}

/// `[I | 0]` as a row-major `[D, 2D]` weight.
fn identity_history_off(dim: usize) -> Vec<f64> {
    let mut w = vec![0.0; dim * 2 * dim];
    for i in 0..dim {
        w[i * 2 * dim + i] = 1.0;
    }
    w
}

impl Fusion {
    pub fn new(scope: &Scope, dim: usize, heads: usize, mode: FusionMode) -> Result<Self> {
        let proj = Linear::with_init(&scope.pp("proj"), 2 * dim, dim, Init::Values(identity_history_off(dim)), Init::Zeros)?;
        let attn = match mode {
            FusionMode::Sum => None,
            FusionMode::Attention => Some(MultiHeadAttention::new(&scope.pp("attn"), dim, heads)?),
        };
        Ok(Fusion { proj, attn, prefix: scope.prefix().to_string(), dim })
    }

    pub fn mode(&self) -> FusionMode {
        if self.attn.is_some() {
            FusionMode::Attention
        } else {
            FusionMode::Sum
        }
    }

    pub fn reset_projection(&self, params: &ParamStore) -> Result<()> {
        let d = self.dim;
        params.assign(&format!("{}.proj.weight", self.prefix), &tensor_from(identity_history_off(d), &[d, 2 * d])?)?;
        params.assign(&format!("{}.proj.bias", self.prefix), &tensor_from(vec![0.0; d], &[d])?)
    }

    /// Reduces `history` `[B, K, R, L, D]` over K to `[B, R, L, D]`.
    pub fn history_term(&self, q0: &Tensor, history: Option<&Tensor>) -> Result<Tensor> {
        let Some(h) = history else {
            return Ok(q0.zeros_like()?);
        };
        if h.dim(1)? == 0 {
            return Ok(q0.zeros_like()?);
        }
        match &self.attn {
            None => Ok(h.sum(1)?),
            Some(attn) => {
                let (b, k, r, l, d) = h.dims5()?;
                let kv = h.permute((0, 2, 3, 1, 4))?.contiguous()?.reshape((b * r * l, k, d))?;
                let q = q0.reshape((b * r * l, 1, d))?;
                Ok(attn.forward(&q, &kv, None)?.reshape((b, r, l, d))?)
            }
        }
    }

    /// `Q_0^st` `[B, R, L, D]`.
    pub fn fuse(&self, q0: &Tensor, history: Option<&Tensor>) -> Result<Tensor> {
        let term = self.history_term(q0, history)?;
        self.proj.forward(&Tensor::cat(&[q0, &term], 3)?)
    }
}

/// Plans from the backbone only, without the pool.
pub fn infer_baseline(planner: &Planner, view: &SceneView) -> Result<PlanResult> {
    let bundle = to_ego_frame(view, &planner.config.features);
    let batch = Batch::collate(&[&bundle])?;
    let out = planner.backbone(&batch, &ForwardCtx::eval())?;
    pop_single(out.plan.to_results(&batch)?)
}

fn pop_single(mut v: Vec<PlanResult>) -> Result<PlanResult> {
    v.pop().ok_or_else(|| LhpfError::PlannerFailure("planner returned no result".into()))
}

/// One planning step: encode, decode, push the new embedding, fuse, decode again, select.
pub fn infer(planner: &Planner, view: &SceneView, t_frame: usize, pool: HistoryPool) -> Result<(PlanResult, HistoryPool)> {
    let bundle = to_ego_frame(view, &planner.config.features);
    infer_bundle(planner, &bundle, t_frame, pool)
}

pub fn infer_bundle(planner: &Planner, bundle: &FeatureBundle, t_frame: usize, mut pool: HistoryPool) -> Result<(PlanResult, HistoryPool)> {
    let ctx = ForwardCtx::eval();
    let batch = Batch::collate(&[bundle])?;
    let bb = planner.backbone(&batch, &ctx)?;
    pool.push(PlanningEmbedding::from_batch(&bb.plan.embedding, &batch, 0, t_frame)?)?;
    let (_, _, l, d) = bb.queries.dims4()?;
    let history = pool.aligned(&batch.ref_ids[0], l, d)?.map(|h| h.unsqueeze(0)).transpose()?;
    let q_st = planner.fusion.fuse(&bb.queries, history.as_ref())?;
    let st = planner.decode_st(&q_st, &batch, &bb.encoding, &bb.plan.free, &ctx)?;
    Ok((pop_single(st.to_results(&batch)?)?, pool))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pe(t: usize, ids: Vec<usize>, fill: f64) -> PlanningEmbedding {
        let n = ids.len() * 2 * 3;
        PlanningEmbedding { t_frame: t, ref_line_ids: ids, lon_modes: 2, dim: 3, values: vec![fill; n] }
    }

    #[test]
    fn grid_and_eviction() {
        let mut p = HistoryPool::new(20, 10).unwrap();
        for t in [0, 10, 20, 30] {
            assert!(p.push(pe(t, vec![0], 1.0)).unwrap());
        }
        assert_eq!(p.frames(), vec![20, 30]);
        assert!(!p.push(pe(35, vec![0], 1.0)).unwrap());
        assert_eq!(p.frames(), vec![20, 30]);
        assert!(p.push(pe(30, vec![0], 1.0)).is_err());
    }

    #[test]
    fn off_grid_push_leaves_pool() {
        let mut p = HistoryPool::new(20, 10).unwrap();
        p.push(pe(0, vec![0], 1.0)).unwrap();
        let before = p.frames();
        assert!(!p.push(pe(5, vec![0], 1.0)).unwrap());
        assert_eq!(p.frames(), before);
    }

    #[test]
    fn interval_equal_to_capacity_keeps_current_only() {
        let mut p = HistoryPool::new(20, 20).unwrap();
        for t in (0..=100).step_by(20) {
            p.push(pe(t, vec![0], 1.0)).unwrap();
            assert_eq!(p.frames(), vec![t]);
        }
    }

    #[test]
    fn alignment_zero_fills_missing_lines() {
        let mut p = HistoryPool::new(20, 10).unwrap();
        p.push(pe(0, vec![3], 2.0)).unwrap();
        let h = p.aligned(&[Some(5), Some(3), None], 2, 3).unwrap().unwrap();
        let v: Vec<f64> = h.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v[..6].iter().all(|&x| x == 0.0));
        assert!(v[6..12].iter().all(|&x| x == 2.0));
        assert!(v[12..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pool_state_round_trip() {
        let mut p = HistoryPool::new(20, 10).unwrap();
        p.push(pe(10, vec![0, 1], 0.25)).unwrap();
        let back = HistoryPool::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn pool_bounded_and_on_grid(interval in 1usize..25, cap in 1usize..40, steps in proptest::collection::vec(1usize..7, 1..60)) {
            let mut p = HistoryPool::new(cap, interval).unwrap();
            let mut t = 0;
            for dt in steps {
                t += dt;
                p.push(pe(t, vec![0], 0.0)).unwrap();
                prop_assert!(p.len() <= cap / interval + 1);
                prop_assert!(p.len() <= p.max_entries());
                for f in p.frames() {
                    prop_assert_eq!(f % interval, 0);
                    prop_assert!(t - f < cap);
                }
            }
        }
    }
}
