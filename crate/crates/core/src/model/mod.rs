//! The planner network: scene encoder, spatial decoder and the spatio-temporal branch.

pub mod batch;
pub mod decoder;
pub mod encoder;

use candle_core::{IndexOp, Tensor};
use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{LhpfError, Result};
use crate::features::FeatureConfig;
use crate::history::{Fusion, FusionConfig, HistoryConfig};
use crate::losses::comfort::TrajPoint;
use crate::nn::{ForwardCtx, ParamStore};
pub use batch::Batch;
use decoder::{DecoderConfig, FactorizedDecoder, FreeHead, PlanHeads, QueryBuilder};
use encoder::{EncoderConfig, SceneEncoder, SceneEncoding};

/// Parameter-name prefixes of the backbone trained in the first phase.
pub const BACKBONE_PREFIXES: [&str; 2] = ["encoder.", "planner."];
/// Prefix of the fusion projection, spatio-temporal decoder and its heads.
pub const ST_PREFIX: &str = "st.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub features: FeatureConfig,
    pub history: HistoryConfig,
    /// T_H in frames.
    pub history_frames: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            features: FeatureConfig::default(),
            history: HistoryConfig::default(),
            history_frames: 20,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small network used for laptop-scale runs and tests.
    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig { hidden_dim: 32, num_layers: 2, num_heads: 4, dropout: 0.0, sde_dropout: 0.2, fourier_bands: 16 },
            decoder: DecoderConfig { num_layers: 2, ..DecoderConfig::default() },
            history: HistoryConfig { fusion: FusionConfig { projection_dim: 32, ..FusionConfig::default() }, ..HistoryConfig::default() },
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.history.validate(self.encoder.hidden_dim)?;
        if self.history_frames < 2 {
            return Err(LhpfError::InvalidArgument("history_frames must be at least 2".into()));
        }
        if self.features.max_ref_lines != self.decoder.max_ref_lines {
            return Err(LhpfError::InvalidArgument("features.max_ref_lines must equal decoder.max_ref_lines".into()));
        }
        Ok(())
    }
}

/// Network outputs for a batch.
#[derive(Debug, Clone)]
pub struct PlanOutput {
    /// `[B, R, L, T, 6]`
    pub trajectories: Tensor,
    /// `[B, R, L]` logits
    pub scores: Tensor,
    /// `[B, T, 6]`
    pub free: Tensor,
    /// Decoder output `[B, R, L, D]`.
    pub embedding: Tensor,
}

#[derive(Debug, Clone)]
pub struct BackboneOutput {
    pub encoding: SceneEncoding,
    /// Spatial queries `[B, R, L, D]`.
    pub queries: Tensor,
    pub plan: PlanOutput,
}

/// One sample's candidates and the selected plan, in the ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    /// `[N_R, N_L, T_f, 6]`
    pub trajectories: Array4<f64>,
    /// `[N_R, N_L]`
    pub scores: Array2<f64>,
    /// `[T_f, 6]`
    pub free_trajectory: Array2<f64>,
    /// `None` when there is no reference line and the free trajectory is used.
    pub selected: Option<(usize, usize)>,
    pub selected_trajectory: Vec<TrajPoint>,
    pub ref_line_ids: Vec<usize>,
}

fn rows_to_points(a: ndarray::ArrayView2<f64>) -> Vec<TrajPoint> {
    a.rows().into_iter().map(|r| [r[0], r[1], r[2], r[3], r[4], r[5]]).collect()
}

impl PlanOutput {
    pub fn detach(&self) -> PlanOutput {
        PlanOutput {
            trajectories: self.trajectories.detach(),
            scores: self.scores.detach(),
            free: self.free.detach(),
            embedding: self.embedding.detach(),
        }
    }

    /// Strips padding and selects `argmax softmax(scores)` per sample.
    pub fn to_results(&self, batch: &Batch) -> Result<Vec<PlanResult>> {
        let (_, _, l, t, _) = self.trajectories.dims5()?;
        let mut out = Vec::with_capacity(batch.size);
        for (b, ids) in batch.ref_ids.iter().enumerate() {
            let r = ids.iter().take_while(|x| x.is_some()).count();
            let free_v: Vec<Vec<f64>> = self.free.i(b)?.to_vec2()?;
            let free_trajectory = Array2::from_shape_vec((t, 6), free_v.concat()).map_err(|e| LhpfError::InvalidArgument(e.to_string()))?;
            let (trajectories, scores) = if r > 0 {
                let tr: Vec<f64> = self.trajectories.i(b)?.narrow(0, 0, r)?.flatten_all()?.to_vec1()?;
                let sc: Vec<f64> = self.scores.i(b)?.narrow(0, 0, r)?.flatten_all()?.to_vec1()?;
                (
                    Array4::from_shape_vec((r, l, t, 6), tr).map_err(|e| LhpfError::InvalidArgument(e.to_string()))?,
                    Array2::from_shape_vec((r, l), sc).map_err(|e| LhpfError::InvalidArgument(e.to_string()))?,
                )
            } else {
                (Array4::zeros((0, l, t, 6)), Array2::zeros((0, l)))
            };
            let selected = scores
                .indexed_iter()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(ix, _)| ix);
            let selected_trajectory = match selected {
                Some((ri, li)) => rows_to_points(trajectories.slice(ndarray::s![ri, li, .., ..])),
                None => rows_to_points(free_trajectory.view()),
            };
            out.push(PlanResult {
                trajectories,
                scores,
                free_trajectory,
                selected,
                selected_trajectory,
                ref_line_ids: ids.iter().flatten().copied().collect(),
            });
        }
        Ok(out)
    }
}

/// All planner parameters plus the modules reading them.
#[derive(Clone)]
pub struct Planner {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: SceneEncoder,
    pub queries: QueryBuilder,
    pub decoder: FactorizedDecoder,
    pub heads: PlanHeads,
    pub free_head: FreeHead,
    pub fusion: Fusion,
    pub st_decoder: FactorizedDecoder,
    pub st_heads: PlanHeads,
}

impl Planner {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::new(config.seed);
        let root = params.root();
        let d = config.encoder.hidden_dim;
        let heads = config.encoder.num_heads;
        let horizon = config.decoder.horizon;
        let planner = root.pp("planner");
        let st = root.pp("st");
        Ok(Planner {
            encoder: SceneEncoder::new(&root.pp("encoder"), &config.encoder, config.history_frames)?,
            queries: QueryBuilder::new(&planner.pp("query"), d, config.decoder.lon_modes)?,
            decoder: FactorizedDecoder::new(&planner.pp("decoder"), d, heads, config.decoder.num_layers)?,
            heads: PlanHeads::new(&planner.pp("heads"), d, horizon)?,
            free_head: FreeHead::new(&planner.pp("free_head"), d, horizon)?,
            fusion: Fusion::new(&st.pp("fusion"), d, heads, config.history.fusion.mode)?,
            st_decoder: FactorizedDecoder::new(&st.pp("decoder"), d, heads, config.decoder.num_layers)?,
            st_heads: PlanHeads::new(&st.pp("heads"), d, horizon)?,
            config,
            params,
        })
    }

    pub fn encode(&self, batch: &Batch, ctx: &ForwardCtx) -> Result<SceneEncoding> {
        self.encoder.forward(batch, ctx)
    }

    /// `Q_0 [B, R, L, D]`.
    pub fn spatial_queries(&self, batch: &Batch) -> Result<Tensor> {
        let q_lat = self.queries.lateral(&self.encoder.polylines, &self.encoder.position, &batch.ref_lines, &batch.ref_attrs, &batch.ref_anchors)?;
        self.queries.combine(&q_lat)
    }

    pub fn decode_plan(&self, q0: &Tensor, batch: &Batch, enc: &SceneEncoding, ctx: &ForwardCtx) -> Result<Tensor> {
        self.decoder.forward(q0, &batch.ref_mask, enc, ctx)
    }

    pub fn emit_plan(&self, embedding: &Tensor, enc: &SceneEncoding) -> Result<PlanOutput> {
        let (trajectories, scores) = self.heads.forward(embedding)?;
        let free = self.free_head.forward(&enc.ego()?)?;
        Ok(PlanOutput { trajectories, scores, free, embedding: embedding.clone() })
    }

    pub fn backbone(&self, batch: &Batch, ctx: &ForwardCtx) -> Result<BackboneOutput> {
        let encoding = self.encode(batch, ctx)?;
        let queries = self.spatial_queries(batch)?;
        let embedding = self.decode_plan(&queries, batch, &encoding, ctx)?;
        let plan = self.emit_plan(&embedding, &encoding)?;
        Ok(BackboneOutput { encoding, queries, plan })
    }

    /// Spatio-temporal decoder and heads on fused queries. `free` is passed through.
    pub fn decode_st(&self, q_st: &Tensor, batch: &Batch, enc: &SceneEncoding, free: &Tensor, ctx: &ForwardCtx) -> Result<PlanOutput> {
        let embedding = self.st_decoder.forward(q_st, &batch.ref_mask, enc, ctx)?;
        let (trajectories, scores) = self.st_heads.forward(&embedding)?;
        Ok(PlanOutput { trajectories, scores, free: free.clone(), embedding })
    }

    /// Copies the spatial decoder and heads into the spatio-temporal branch and resets the
    /// fusion projection so history contributes nothing until fine-tuning moves it.
    pub fn init_st_from_backbone(&self) -> Result<()> {
        for (name, var) in self.params.vars_with_prefix("planner.decoder.").into_iter().chain(self.params.vars_with_prefix("planner.heads.")) {
            let target = name.replacen("planner.", "st.", 1);
            self.params.assign(&target, var.as_tensor())?;
        }
        self.fusion.reset_projection(&self.params)
    }

    /// Copies every parameter `other` has under the same name and shape. Returns the names
    /// that were left untouched.
    pub fn copy_params_from(&self, other: &Planner) -> Result<Vec<String>> {
        let mut untouched = Vec::new();
        for (name, var) in self.params.named_vars() {
            match other.params.get(&name) {
                Some(src) if src.dims() == var.dims() => self.params.assign(&name, src.as_tensor())?,
                _ => untouched.push(name),
            }
        }
        Ok(untouched)
    }

    pub fn is_backbone_param(name: &str) -> bool {
        BACKBONE_PREFIXES.iter().any(|p| name.starts_with(p))
    }
}
