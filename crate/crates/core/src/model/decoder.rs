//! Spatial queries, the factorized-attention decoder and the output heads.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::encoder::{FourierEmbedding, PolylineEncoder, SceneEncoding};
use crate::error::{LhpfError, Result};
use crate::nn::{tensor_from, CrossAttentionBlock, ForwardCtx, Init, LayerNorm, Mlp, Scope, SelfAttentionBlock};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub num_layers: usize,
    /// N_L
    pub lon_modes: usize,
    pub max_ref_lines: usize,
    /// T_f
    pub horizon: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { num_layers: 4, lon_modes: 4, max_ref_lines: 4, horizon: 80 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lon_modes == 0 || self.max_ref_lines == 0 || self.horizon == 0 {
            return Err(LhpfError::InvalidArgument("decoder needs lon_modes, max_ref_lines and horizon > 0".into()));
        }
        Ok(())
    }
}

/// Builds `Q_0 [B, R, L, D]` from reference-line encodings and learned longitudinal queries.
#[derive(Debug, Clone)]
pub struct QueryBuilder {
    lon: Tensor,
    mix: Mlp,
}

impl QueryBuilder {
    pub fn new(scope: &Scope, dim: usize, lon_modes: usize) -> Result<Self> {
        Ok(QueryBuilder { lon: scope.get("lon", &[lon_modes, dim], Init::Uniform(0.5))?, mix: Mlp::new(&scope.pp("mix"), 2 * dim, dim, dim)? })
    }

    /// Lateral queries: the shared polyline encoder plus the Fourier embedding of each line's first point.
    pub fn lateral(
        &self,
        polylines: &PolylineEncoder,
        position: &FourierEmbedding,
        ref_lines: &Tensor,
        ref_attrs: &Tensor,
        anchors: &Tensor,
    ) -> Result<Tensor> {
        Ok((polylines.forward(ref_lines, ref_attrs)? + position.forward(anchors)?)?)
    }

    /// `q_lat` `[B, R, D]` to `[B, R, L, D]`.
    pub fn combine(&self, q_lat: &Tensor) -> Result<Tensor> {
        let (b, r, d) = q_lat.dims3()?;
        let l = self.lon.dim(0)?;
        let lat = q_lat.unsqueeze(2)?.broadcast_as((b, r, l, d))?;
        let lon = self.lon.reshape((1, 1, l, d))?.broadcast_as((b, r, l, d))?;
        self.mix.forward(&Tensor::cat(&[&lat, &lon], 3)?)
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    lateral: SelfAttentionBlock,
    longitudinal: SelfAttentionBlock,
    cross: CrossAttentionBlock,
}

/// Per layer: self-attention over reference lines, then over longitudinal modes, then
/// cross-attention to the scene.
#[derive(Debug, Clone)]
pub struct FactorizedDecoder {
    layers: Vec<DecoderLayer>,
    norm: LayerNorm,
    label: String,
}

impl FactorizedDecoder {
    pub fn new(scope: &Scope, dim: usize, heads: usize, num_layers: usize) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|i| {
                let s = scope.pp(&format!("layers.{i}"));
                Ok(DecoderLayer {
                    lateral: SelfAttentionBlock::new(&s.pp("lateral"), dim, heads)?,
                    longitudinal: SelfAttentionBlock::new(&s.pp("longitudinal"), dim, heads)?,
                    cross: CrossAttentionBlock::new(&s.pp("cross"), dim, heads)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FactorizedDecoder { layers, norm: LayerNorm::new(&scope.pp("norm"), dim)?, label: scope.prefix().to_string() })
    }

    /// `q` `[B, R, L, D]`, `ref_mask` `[B, R]`; returns the planning embedding `[B, R, L, D]`.
    pub fn forward(&self, q: &Tensor, ref_mask: &Tensor, enc: &SceneEncoding, ctx: &ForwardCtx) -> Result<Tensor> {
        let (b, r, l, d) = q.dims4()?;
        let lat_mask = ref_mask.unsqueeze(1)?.broadcast_as((b, l, r))?.reshape((b * l, r))?;
        let mut x = q.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            ctx.record(format!("{}.{i}.lateral", self.label));
            let xt = x.transpose(1, 2)?.reshape((b * l, r, d))?;
            let xt = layer.lateral.forward(&xt, Some(&lat_mask), ctx)?;
            x = xt.reshape((b, l, r, d))?.transpose(1, 2)?.contiguous()?;

            ctx.record(format!("{}.{i}.longitudinal", self.label));
            let xl = layer.longitudinal.forward(&x.reshape((b * r, l, d))?, None, ctx)?;

            ctx.record(format!("{}.{i}.cross", self.label));
            let xc = layer.cross.forward(&xl.reshape((b, r * l, d))?, &enc.tokens, Some(&enc.token_mask), ctx)?;
            x = xc.reshape((b, r, l, d))?;
        }
        self.norm.forward(&x)
    }
}

/// Position scale (m) at the first step and its growth per step, so each waypoint is
/// regressed relative to how far the ego can get by then.
const POSITION_SCALE: f64 = 1.0;
const POSITION_SCALE_STEP: f64 = 0.25;
const VELOCITY_SCALE: f64 = 10.0;
const HEADING_EPS: f64 = 1e-12;

/// Raw `[..., T*6]` to `[..., T, 6]` trajectories with a unit heading vector.
/// The cosine channel is offset by one so an untrained head points forward.
pub fn finish_trajectory(raw: &Tensor, horizon: usize) -> Result<Tensor> {
    let mut shape = raw.dims().to_vec();
    let last = shape.len() - 1;
    shape[last] = horizon;
    shape.push(6);
    let x = raw.reshape(shape)?;
    let k = x.rank() - 1;
    let steps: Vec<f64> = (0..horizon).map(|t| POSITION_SCALE + POSITION_SCALE_STEP * t as f64).collect();
    let mut scale_shape = vec![1; x.rank()];
    scale_shape[k - 1] = horizon;
    let scale = tensor_from(steps, &scale_shape)?;
    let pos = x.narrow(k, 0, 2)?.broadcast_mul(&scale)?;
    let c = (x.narrow(k, 2, 1)? + 1.0)?;
    let s = x.narrow(k, 3, 1)?;
    let norm = ((c.sqr()? + s.sqr()?)? + HEADING_EPS)?.sqrt()?;
    let vel = (x.narrow(k, 4, 2)? * VELOCITY_SCALE)?;
    Ok(Tensor::cat(&[&pos, &c.broadcast_div(&norm)?, &s.broadcast_div(&norm)?, &vel], k)?)
}

/// Trajectory and score heads applied per query.
#[derive(Debug, Clone)]
pub struct PlanHeads {
    trajectory: Mlp,
    score: Mlp,
    horizon: usize,
}

impl PlanHeads {
    pub fn new(scope: &Scope, dim: usize, horizon: usize) -> Result<Self> {
        Ok(PlanHeads {
            trajectory: Mlp::new(&scope.pp("trajectory"), dim, dim, horizon * 6)?,
            score: Mlp::new(&scope.pp("score"), dim, dim, 1)?,
            horizon,
        })
    }

    /// `emb` `[B, R, L, D]` to (`[B, R, L, T, 6]`, `[B, R, L]`).
    pub fn forward(&self, emb: &Tensor) -> Result<(Tensor, Tensor)> {
        let traj = finish_trajectory(&self.trajectory.forward(emb)?, self.horizon)?;
        let score = self.score.forward(emb)?.squeeze(3)?;
        Ok((traj, score))
    }
}

/// Reference-free trajectory from the encoded ego token.
#[derive(Debug, Clone)]
pub struct FreeHead {
    trajectory: Mlp,
    horizon: usize,
}

impl FreeHead {
    pub fn new(scope: &Scope, dim: usize, horizon: usize) -> Result<Self> {
        Ok(FreeHead { trajectory: Mlp::new(&scope.pp("trajectory"), dim, dim, horizon * 6)?, horizon })
    }

    /// `ego` `[B, D]` to `[B, T, 6]`.
    pub fn forward(&self, ego: &Tensor) -> Result<Tensor> {
        finish_trajectory(&self.trajectory.forward(ego)?, self.horizon)
    }
}
