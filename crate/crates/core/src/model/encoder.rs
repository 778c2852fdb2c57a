//! Scene encoder: agent pyramid with neighbor attention, state-dropout ego encoder,
//! PointNet polylines, obstacle MLP, Fourier positions, role embeddings and a
//! pre-norm Transformer stack.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use crate::error::{LhpfError, Result};
use crate::features::{AGENT_CHANNELS, NUM_ROLES, OBSTACLE_CHANNELS, POLYLINE_ATTRS, POLYLINE_CHANNELS};
use crate::nn::{device, tensor_from, FeedForwardBlock, ForwardCtx, Init, LayerNorm, Linear, Mlp, MultiHeadAttention, Scope, SelfAttentionBlock};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub sde_dropout: f64,
    pub fourier_bands: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { hidden_dim: 128, num_layers: 4, num_heads: 8, dropout: 0.1, sde_dropout: 0.5, fourier_bands: 64 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(LhpfError::InvalidArgument(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        for (name, v) in [("dropout", self.dropout), ("sde_dropout", self.sde_dropout)] {
            if !(0.0..1.0).contains(&v) && !(name == "sde_dropout" && v == 1.0) {
                return Err(LhpfError::InvalidArgument(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.fourier_bands == 0 {
            return Err(LhpfError::InvalidArgument("fourier_bands must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed per-channel input scales, so raw meters and m/s enter the first layers near unit size.
const AGENT_SCALE: [f64; AGENT_CHANNELS] = [1.0, 1.0, 5.0, 1.0, 1.0, 0.2, 0.5, 1.0];
const POLYLINE_SCALE: [f64; POLYLINE_CHANNELS] = [0.05, 0.05, 0.2, 0.2, 0.5, 0.5, 0.5, 0.5];
const OBSTACLE_SCALE: [f64; OBSTACLE_CHANNELS] = [0.05, 0.05, 1.0, 0.2, 0.5];

fn scale_last(x: &Tensor, scale: &[f64]) -> Result<Tensor> {
    let s = Tensor::new(scale, x.device())?;
    Ok(x.broadcast_mul(&s)?)
}

/// Sine/cosine features of (x, y) over log-spaced wavelengths from 400 m to 1 m, projected to D.
#[derive(Debug, Clone)]
pub struct FourierEmbedding {
    freqs: Tensor,
    proj: Linear,
}

impl FourierEmbedding {
    pub fn new(scope: &Scope, bands: usize, dim: usize) -> Result<Self> {
        let (lo, hi) = (1.0f64, 400.0f64);
        let freqs: Vec<f64> = (0..bands)
            .map(|k| {
                let frac = if bands == 1 { 0.0 } else { k as f64 / (bands - 1) as f64 };
                let wavelength = hi * (lo / hi).powf(frac);
                2.0 * std::f64::consts::PI / wavelength
            })
            .collect();
        Ok(FourierEmbedding { freqs: tensor_from(freqs, &[bands])?, proj: Linear::new(&scope.pp("proj"), 4 * bands, dim)? })
    }

    /// `pos` `[..., 2]` to `[..., D]`.
    pub fn forward(&self, pos: &Tensor) -> Result<Tensor> {
        let last = pos.rank() - 1;
        let x = pos.narrow(last, 0, 1)?.broadcast_mul(&self.freqs)?;
        let y = pos.narrow(last, 1, 1)?.broadcast_mul(&self.freqs)?;
        let feats = Tensor::cat(&[x.sin()?, x.cos()?, y.sin()?, y.cos()?], last)?;
        self.proj.forward(&feats)
    }
}

/// Temporal pyramid over the differenced history: per-step embedding, stride-2 merges down
/// to at most three steps, laterals from the last step of every level, then attention
/// among agents.
#[derive(Debug, Clone)]
pub struct AgentEncoder {
    input: Linear,
    merges: Vec<Linear>,
    laterals: Vec<Linear>,
    neighbor: SelfAttentionBlock,
    neighbor_ffn: FeedForwardBlock,
    null: Tensor,
}

pub fn pyramid_levels(steps: usize) -> usize {
    let mut t = steps;
    let mut levels = 0;
    while t > 3 {
        t = t.div_ceil(2);
        levels += 1;
    }
    levels
}

impl AgentEncoder {
    pub fn new(scope: &Scope, cfg: &EncoderConfig, steps: usize) -> Result<Self> {
        let d = cfg.hidden_dim;
        let levels = pyramid_levels(steps);
        Ok(AgentEncoder {
            input: Linear::new(&scope.pp("input"), AGENT_CHANNELS, d)?,
            merges: (0..levels).map(|i| Linear::new(&scope.pp(&format!("merge{i}")), 2 * d, d)).collect::<Result<_>>()?,
            laterals: (0..=levels).map(|i| Linear::new(&scope.pp(&format!("lateral{i}")), d, d)).collect::<Result<_>>()?,
            neighbor: SelfAttentionBlock::new(&scope.pp("neighbor"), d, cfg.num_heads)?,
            neighbor_ffn: FeedForwardBlock::new(&scope.pp("neighbor_ffn"), d)?,
            null: scope.get("null", &[d], Init::Uniform(0.1))?,
        })
    }

    /// `agents` `[B, A, T, 8]`, `step_mask` `[B, A, T]`, `agent_mask` `[B, A]` to `[B, A, D]`.
    pub fn forward(&self, agents: &Tensor, step_mask: &Tensor, agent_mask: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let (b, a, _t, _c) = agents.dims4()?;
        let mut cur = self.input.forward(&scale_last(agents, &AGENT_SCALE)?)?.gelu()?.broadcast_mul(&step_mask.unsqueeze(3)?)?;
        let last_step = |x: &Tensor| -> Result<Tensor> {
            let t = x.dim(2)?;
            Ok(x.narrow(2, t - 1, 1)?.squeeze(2)?)
        };
        let mut lateral = self.laterals[0].forward(&last_step(&cur)?)?;
        for (merge, lat) in self.merges.iter().zip(&self.laterals[1..]) {
            let (_, _, t, d) = cur.dims4()?;
            if t % 2 == 1 {
                let pad = Tensor::zeros((b, a, 1, d), DType::F64, &device())?;
                cur = Tensor::cat(&[&pad, &cur], 2)?;
            }
            let t2 = cur.dim(2)? / 2;
            cur = merge.forward(&cur.reshape((b, a, t2, 2 * d))?)?.gelu()?;
            lateral = (lateral + lat.forward(&last_step(&cur)?)?)?;
        }
        let h = self.neighbor.forward(&lateral, Some(agent_mask), ctx)?;
        let h = self.neighbor_ffn.forward(&h, ctx)?;
        let keep = agent_mask.unsqueeze(2)?.broadcast_as(h.shape())?.ne(0.0)?;
        Ok(keep.where_cond(&h, &self.null.broadcast_as(h.shape())?)?)
    }
}

/// Attention pooling over ego kinematic groups; groups are dropped at random while training.
#[derive(Debug, Clone)]
pub struct EgoEncoder {
    velocity: Linear,
    acceleration: Linear,
    yaw_rate: Linear,
    pose_token: Tensor,
    query: Tensor,
    attn: MultiHeadAttention,
    sde_dropout: f64,
}

pub const SDE_GROUPS: usize = 3;

impl EgoEncoder {
    pub fn new(scope: &Scope, cfg: &EncoderConfig) -> Result<Self> {
        let d = cfg.hidden_dim;
        Ok(EgoEncoder {
            velocity: Linear::new(&scope.pp("velocity"), 2, d)?,
            acceleration: Linear::new(&scope.pp("acceleration"), 2, d)?,
            yaw_rate: Linear::new(&scope.pp("yaw_rate"), 1, d)?,
            pose_token: scope.get("pose_token", &[d], Init::Uniform(0.5))?,
            query: scope.get("query", &[d], Init::Uniform(0.5))?,
            attn: MultiHeadAttention::new(&scope.pp("attn"), d, cfg.num_heads)?,
            sde_dropout: cfg.sde_dropout,
        })
    }

    /// `kin` `[B, 5]` (v_x, v_y, a_x, a_y, yaw rate) to `[B, D]`.
    pub fn forward(&self, kin: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let b = kin.dim(0)?;
        let d = self.query.dim(0)?;
        let vel = self.velocity.forward(&(kin.narrow(1, 0, 2)? * 0.1)?)?;
        let acc = self.acceleration.forward(&(kin.narrow(1, 2, 2)? * 0.5)?)?;
        let yaw = self.yaw_rate.forward(&kin.narrow(1, 4, 1)?)?;
        let pose = self.pose_token.unsqueeze(0)?.broadcast_as((b, d))?;
        let tokens = Tensor::stack(&[&pose, &vel, &acc, &yaw], 1)?;
        let group_mask = if ctx.train && self.sde_dropout > 0.0 {
            ctx.keep_mask(&[b, SDE_GROUPS], self.sde_dropout)?
        } else {
            Tensor::ones((b, SDE_GROUPS), DType::F64, &device())?
        };
        let mask = Tensor::cat(&[&Tensor::ones((b, 1), DType::F64, &device())?, &group_mask], 1)?;
        let q = self.query.reshape((1, 1, d))?.broadcast_as((b, 1, d))?.contiguous()?;
        Ok(self.attn.forward(&q, &tokens, Some(&mask))?.squeeze(1)?)
    }
}

/// Shared per-point MLP, max over points, output projection, plus an attribute embedding.
#[derive(Debug, Clone)]
pub struct PolylineEncoder {
    point_mlp: Mlp,
    out: Linear,
    attrs: Linear,
}

impl PolylineEncoder {
    pub fn new(scope: &Scope, dim: usize) -> Result<Self> {
        Ok(PolylineEncoder {
            point_mlp: Mlp::new(&scope.pp("point_mlp"), POLYLINE_CHANNELS, dim, dim)?,
            out: Linear::new(&scope.pp("out"), dim, dim)?,
            attrs: Linear::new(&scope.pp("attrs"), POLYLINE_ATTRS, dim)?,
        })
    }

    /// `points` `[B, P, n, 8]`, `attrs` `[B, P, 5]` to `[B, P, D]`.
    pub fn forward(&self, points: &Tensor, attrs: &Tensor) -> Result<Tensor> {
        let h = self.point_mlp.forward(&scale_last(points, &POLYLINE_SCALE)?)?;
        let pooled = h.max(2)?;
        Ok((self.out.forward(&pooled)? + self.attrs.forward(attrs)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct ObstacleEncoder {
    mlp: Mlp,
}

impl ObstacleEncoder {
    pub fn new(scope: &Scope, dim: usize) -> Result<Self> {
        Ok(ObstacleEncoder { mlp: Mlp::new(&scope.pp("mlp"), OBSTACLE_CHANNELS, dim, dim)? })
    }

    pub fn forward(&self, obstacles: &Tensor) -> Result<Tensor> {
        self.mlp.forward(&scale_last(obstacles, &OBSTACLE_SCALE)?)
    }
}

/// Encoded scene tokens in the order ego, agents, obstacles, map.
#[derive(Debug, Clone)]
pub struct SceneEncoding {
    /// `[B, N, D]`
    pub tokens: Tensor,
    /// `[B, N]`, 1 for tokens other consumers may attend to.
    pub token_mask: Tensor,
    pub token_roles: Vec<u32>,
}

impl SceneEncoding {
    /// Post-encoder ego token `[B, D]`.
    pub fn ego(&self) -> Result<Tensor> {
        Ok(self.tokens.narrow(1, 0, 1)?.squeeze(1)?)
    }

    pub fn detach(&self) -> SceneEncoding {
        SceneEncoding { tokens: self.tokens.detach(), token_mask: self.token_mask.clone(), token_roles: self.token_roles.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct SceneEncoder {
    pub agents: AgentEncoder,
    pub ego: EgoEncoder,
    pub polylines: PolylineEncoder,
    pub obstacles: ObstacleEncoder,
    pub position: FourierEmbedding,
    roles: Tensor,
    layers: Vec<(SelfAttentionBlock, FeedForwardBlock)>,
    norm: LayerNorm,
}

impl SceneEncoder {
    pub fn new(scope: &Scope, cfg: &EncoderConfig, history_frames: usize) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden_dim;
        Ok(SceneEncoder {
            agents: AgentEncoder::new(&scope.pp("agents"), cfg, history_frames - 1)?,
            ego: EgoEncoder::new(&scope.pp("ego"), cfg)?,
            polylines: PolylineEncoder::new(&scope.pp("polylines"), d)?,
            obstacles: ObstacleEncoder::new(&scope.pp("obstacles"), d)?,
            position: FourierEmbedding::new(&scope.pp("position"), cfg.fourier_bands, d)?,
            roles: scope.get("roles", &[NUM_ROLES, d], Init::Uniform(0.5))?,
            layers: (0..cfg.num_layers)
                .map(|i| {
                    let s = scope.pp(&format!("layers.{i}"));
                    Ok((SelfAttentionBlock::new(&s.pp("attn"), d, cfg.num_heads)?, FeedForwardBlock::new(&s.pp("ffn"), d)?))
                })
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(&scope.pp("norm"), d)?,
        })
    }

    pub fn forward(&self, batch: &Batch, ctx: &ForwardCtx) -> Result<SceneEncoding> {
        let ego = self.ego.forward(&batch.ego_kinematics, ctx)?.unsqueeze(1)?;
        let agents = self.agents.forward(&batch.agents, &batch.agent_step_mask, &batch.agent_mask, ctx)?;
        let obstacles = self.obstacles.forward(&batch.obstacles)?;
        let map = self.polylines.forward(&batch.polylines, &batch.polyline_attrs)?;
        let e0 = Tensor::cat(&[&ego, &agents, &obstacles, &map], 1)?;
        let roles = Tensor::new(batch.token_roles.as_slice(), &device())?;
        let role_emb = self.roles.index_select(&roles, 0)?;
        let mut x = (e0 + self.position.forward(&batch.token_positions)?)?.broadcast_add(&role_emb)?;
        x = ctx.dropout(&x)?;
        for (attn, ffn) in &self.layers {
            x = attn.forward(&x, Some(&batch.token_mask), ctx)?;
            x = ffn.forward(&x, ctx)?;
        }
        Ok(SceneEncoding { tokens: self.norm.forward(&x)?, token_mask: batch.token_mask.clone(), token_roles: batch.token_roles.clone() })
    }
}
