//! Sample construction and the two training phases.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LhpfError, Result};
use crate::features::{to_ego_frame, window_features, FeatureBundle, SceneView};
use crate::history::{HistoryPool, PlanningEmbedding, PoolTrainingMode};
use crate::losses::comfort::{comfort_loss_tensor, ComfortLimits};
use crate::losses::imitation::{gather_rows, imitation_loss};
use crate::losses::target::project_target;
use crate::model::encoder::SceneEncoding;
use crate::model::{Batch, ModelConfig, PlanOutput, Planner, ST_PREFIX};
use crate::nn::{tensor_from, ForwardCtx};
use crate::geometry::Vec2;
use crate::scenario::{AgentState, ScenarioWorld, WindowConfig, DT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub reg: f64,
    pub cls: f64,
    pub comfort: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { reg: 1.0, cls: 1.0, comfort: 1.0 }
    }
}

/// Which trajectories the comfort penalty is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComfortScope {
    /// The target-indexed candidate and the free trajectory.
    #[default]
    Supervised,
    /// Every candidate plus the free trajectory.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub weights: LossWeights,
    pub comfort: bool,
    pub comfort_scope: ComfortScope,
    pub comfort_limits: ComfortLimits,
    /// Frames between consecutive training windows of one scenario.
    pub window_stride: usize,
    pub dropout: f64,
    pub seed: u64,
    #[serde(default)]
    pub augment: Augmentation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            warmup_epochs: 3,
            peak_lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            grad_clip: 5.0,
            weights: LossWeights::default(),
            comfort: true,
            comfort_scope: ComfortScope::Supervised,
            comfort_limits: ComfortLimits::default(),
            window_stride: 10,
            dropout: 0.1,
            seed: 0,
            augment: Augmentation::default(),
        }
    }
}

impl TrainConfig {
    /// First-phase defaults: imitation only.
    pub fn phase1() -> Self {
        TrainConfig { epochs: 200, comfort: false, ..TrainConfig::default() }
    }

    pub fn phase2() -> Self {
        TrainConfig::default()
    }

    /// Small-model first phase: smaller batches, higher learning rate, no dropout.
    pub fn desk_phase1() -> Self {
        TrainConfig { batch_size: 16, peak_lr: 3e-3, dropout: 0.0, ..TrainConfig::phase1() }
    }

    /// Small-model second phase with a lighter comfort weight.
    pub fn desk_phase2() -> Self {
        TrainConfig { batch_size: 16, dropout: 0.0, weights: LossWeights { comfort: 0.2, ..LossWeights::default() }, ..TrainConfig::phase2() }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if w.reg < 0.0 || w.cls < 0.0 || w.comfort < 0.0 {
            return Err(LhpfError::InvalidArgument("loss weights must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.window_stride == 0 {
            return Err(LhpfError::InvalidArgument("epochs, batch_size and window_stride must be positive".into()));
        }
        if !(self.peak_lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(LhpfError::InvalidArgument("peak_lr and grad_clip must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LhpfError::InvalidArgument("dropout must lie in [0, 1)".into()));
        }
        self.augment.validate()?;
        self.comfort_limits.validate()
    }

    /// Linear warmup to `peak_lr`, then cosine decay to zero; `progress` counts epochs.
    pub fn learning_rate(&self, progress: f64) -> f64 {
        let warm = self.warmup_epochs.min(self.epochs) as f64;
        let total = self.epochs as f64;
        if progress < warm {
            self.peak_lr * (progress + 1.0 / 64.0).min(warm) / warm
        } else if total > warm {
            let x = ((progress - warm) / (total - warm)).clamp(0.0, 1.0);
            0.5 * self.peak_lr * (1.0 + (std::f64::consts::PI * x).cos())
        } else {
            self.peak_lr
        }
    }
}

/// Ego-state perturbation of training windows: the ego's logged past is moved rigidly to a
/// shifted and rotated pose, and the target rejoins the logged future over `rejoin_frames`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    /// Perturbed copies added per window.
    pub copies: usize,
    /// m, sampled uniformly in `[-max_lateral, max_lateral]`.
    pub max_lateral: f64,
    /// rad
    pub max_heading: f64,
    pub rejoin_frames: usize,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation { copies: 2, max_lateral: 1.0, max_heading: 0.1, rejoin_frames: 15 }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Augmentation { copies: 0, ..Augmentation::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.copies > 0 && !(self.max_lateral >= 0.0 && self.max_heading >= 0.0 && self.rejoin_frames > 0) {
            return Err(LhpfError::InvalidArgument("augmentation needs non-negative ranges and rejoin_frames > 0".into()));
        }
        Ok(())
    }
}

/// Rigid motion about `pivot`: rotate by `dtheta`, then shift by `shift`.
#[derive(Debug, Clone, Copy)]
struct Perturbation {
    pivot: Vec2,
    dtheta: f64,
    shift: Vec2,
}

impl Perturbation {
    fn point(&self, p: Vec2) -> Vec2 {
        (p - self.pivot).rotate(self.dtheta) + self.pivot + self.shift
    }

    fn state(&self, s: &AgentState) -> AgentState {
        let mut out = AgentState::new(self.point(s.position), s.heading + self.dtheta, s.velocity.rotate(self.dtheta), s.bbox);
        out.observed = s.observed;
        out
    }
}

const REJOIN_MIN_SPEED: f64 = 1.0;

/// Logged future blended from the perturbed frame back onto the log. The weight `(1 - i/F)^2`
/// starts correcting on the first step and lands on the log with zero slope.
fn rejoin(future: &[AgentState], now: &AgentState, p: &Perturbation, frames: usize) -> Vec<AgentState> {
    let weight = |i: usize| (1.0 - (i as f64 / frames as f64).min(1.0)).powi(2);
    let mut pos: Vec<Vec2> = vec![p.point(now.position)];
    pos.extend(future.iter().enumerate().map(|(k, s)| s.position + (p.point(s.position) - s.position) * weight(k + 1)));
    let n = pos.len();
    future
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let i = k + 1;
            let v = if i + 1 < n { (pos[i + 1] - pos[i - 1]) * (0.5 / DT) } else { (pos[i] - pos[i - 1]) * (1.0 / DT) };
            let heading = if v.norm() > REJOIN_MIN_SPEED { v.y.atan2(v.x) } else { s.heading + weight(i) * p.dtheta };
            let mut out = AgentState::new(pos[i], heading, v, s.bbox);
            out.observed = s.observed;
            out
        })
        .collect()
}

/// One supervised planning instant.
#[derive(Debug, Clone)]
pub struct Sample {
    pub scenario: usize,
    pub t_now: usize,
    pub bundle: FeatureBundle,
    /// Ego-frame expert horizon, `T_f * 6` row-major.
    pub target: Vec<f64>,
    pub target_index: u32,
    /// Bundles at `t_now - k * interval`, `k = 1..`, for logged-pool training; `None` where the
    /// window does not exist.
    pub past: Vec<Option<FeatureBundle>>,
}

/// Windows `t_now = history, history + stride, ...` of every scenario.
pub fn build_samples(scenarios: &[ScenarioWorld], model: &ModelConfig, stride: usize) -> Result<Vec<Sample>> {
    build_augmented_samples(scenarios, model, stride, &Augmentation::none(), 0)
}

/// Training samples for `cfg`: every window plus its perturbed copies.
pub fn build_training_samples(scenarios: &[ScenarioWorld], model: &ModelConfig, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    build_augmented_samples(scenarios, model, cfg.window_stride, &cfg.augment, cfg.seed)
}

/// Unperturbed windows come first within each `(scenario, t_now)` group, followed by `aug.copies` perturbed ones.
pub fn build_augmented_samples(scenarios: &[ScenarioWorld], model: &ModelConfig, stride: usize, aug: &Augmentation, seed: u64) -> Result<Vec<Sample>> {
    aug.validate()?;
    let wcfg = WindowConfig { history_frames: model.history_frames, horizon_frames: model.decoder.horizon };
    let hist = &model.history;
    let past_count = if hist.training_pool == PoolTrainingMode::Logged { hist.max_entries().saturating_sub(1) } else { 0 };
    let jobs: Vec<(usize, usize, usize)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            let last = s.last_frame();
            let end = last.saturating_sub(wcfg.horizon_frames);
            (wcfg.history_frames..=end).step_by(stride.max(1)).flat_map(move |t| (0..=aug.copies).map(move |c| (si, t, c)))
        })
        .collect();
    jobs.par_iter()
        .map(|&(si, t, copy)| {
            let s = &scenarios[si];
            let w = s.slice_window_with(t, wcfg)?;
            let refs = &s.reference_lines[..s.reference_lines.len().min(model.features.max_ref_lines)];
            let (bundle, tgt) = if copy == 0 {
                (window_features(&w, &model.features), project_target(w.expert_horizon(), w.ego_now(), refs, model.decoder.lon_modes)?)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((si as u64) << 40) ^ ((t as u64) << 16) ^ copy as u64);
                let now = w.ego_now();
                let lat = aug.max_lateral * rng.random_range(-1.0..=1.0);
                let p = Perturbation {
                    pivot: now.position,
                    dtheta: aug.max_heading * rng.random_range(-1.0..=1.0),
                    shift: Vec2::from_angle(now.heading).perp() * lat,
                };
                let ego: Vec<AgentState> = w.ego_history().iter().map(|e| p.state(e)).collect();
                let view = SceneView { ego_history: &ego, ..SceneView::from_window(&w) };
                let future = rejoin(w.expert_horizon(), now, &p, aug.rejoin_frames);
                let ego_now = *ego.last().expect("non-empty history");
                (to_ego_frame(&view, &model.features), project_target(&future, &ego_now, refs, model.decoder.lon_modes)?)
            };
            let past = (1..=past_count)
                .map(|k| {
                    t.checked_sub(k * hist.interval)
                        .and_then(|tp| s.slice_window_with(tp, wcfg).ok())
                        .map(|pw| window_features(&pw, &model.features))
                })
                .collect();
            Ok(Sample {
                scenario: si,
                t_now: t,
                bundle,
                target: tgt.trajectory.concat(),
                target_index: tgt.flat_index(model.decoder.lon_modes) as u32,
                past,
            })
        })
        .collect()
}

fn target_tensor(samples: &[&Sample], horizon: usize) -> Result<Tensor> {
    let data: Vec<f64> = samples.iter().flat_map(|s| s.target.iter().copied()).collect();
    tensor_from(data, &[samples.len(), horizon, 6])
}

/// Per-epoch record of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: u8,
    pub epoch: usize,
    pub reg: f64,
    pub cls: f64,
    pub comfort: f64,
    pub total: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl EpochLog {
    pub fn imitation(&self) -> f64 {
        self.reg + self.cls
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

struct LossParts {
    total: Tensor,
    reg: f64,
    cls: f64,
    comfort: f64,
}

/// `[B, R, L, ...]` candidates flattened to `[B, R*L, ...]` plus the matching score mask.
fn flatten_candidates(plan: &PlanOutput, batch: &Batch) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, r, l, t, c) = plan.trajectories.dims5()?;
    let traj = plan.trajectories.reshape((b, r * l, t, c))?;
    let scores = plan.scores.reshape((b, r * l))?;
    let mask = batch.ref_mask.unsqueeze(2)?.broadcast_as((b, r, l))?.reshape((b, r * l))?;
    Ok((traj, scores, mask))
}

fn plan_loss(plan: &PlanOutput, batch: &Batch, target: &Tensor, index: &[u32], cfg: &TrainConfig) -> Result<LossParts> {
    let (traj, scores, mask) = flatten_candidates(plan, batch)?;
    let il = imitation_loss(&traj, &scores, &mask, Some(&plan.free), target, index)?;
    let w = &cfg.weights;
    let mut total = ((il.reg.clone() * w.reg)? + (il.cls.clone() * w.cls)?)?;
    let mut comfort_v = 0.0;
    if cfg.comfort {
        let (b, n, t, c) = traj.dims4()?;
        let on = match cfg.comfort_scope {
            ComfortScope::Supervised => gather_rows(&traj, index)?,
            ComfortScope::All => traj.reshape((b * n, t, c))?,
        };
        let comfort = (comfort_loss_tensor(&on, DT, &cfg.comfort_limits)?.mean_all()?
            + comfort_loss_tensor(&plan.free, DT, &cfg.comfort_limits)?.mean_all()?)?;
        comfort_v = comfort.to_scalar::<f64>()?;
        total = (total + (comfort * w.comfort)?)?;
    }
    Ok(LossParts { reg: il.reg.to_scalar()?, cls: il.cls.to_scalar()?, comfort: comfort_v, total })
}

/// Global-norm clipping; returns the norm before clipping.
fn clip_grads(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if norm.is_finite() && norm > max_norm {
        let scale = max_norm / (norm + 1e-12);
        for v in vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                let scaled = (g * scale)?;
                grads.insert(v.as_tensor(), scaled);
            }
        }
    }
    Ok(norm)
}

fn optimizer(vars: Vec<Var>, cfg: &TrainConfig) -> Result<AdamW> {
    Ok(AdamW::new(vars, ParamsAdamW { lr: cfg.learning_rate(0.0), weight_decay: cfg.weight_decay, ..ParamsAdamW::default() })?)
}

fn batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size).map(|c| c.to_vec()).collect()
}

#[derive(Default)]
struct Accum {
    reg: f64,
    cls: f64,
    comfort: f64,
    total: f64,
    norm: f64,
    count: f64,
}

impl Accum {
    fn add(&mut self, p: &LossParts, total: f64, norm: f64, weight: f64) {
        self.reg += p.reg * weight;
        self.cls += p.cls * weight;
        self.comfort += p.comfort * weight;
        self.total += total * weight;
        self.norm = self.norm.max(norm);
        self.count += weight;
    }

    fn finish(&self, phase: u8, epoch: usize, lr: f64) -> EpochLog {
        let c = self.count.max(1.0);
        EpochLog { phase, epoch, reg: self.reg / c, cls: self.cls / c, comfort: self.comfort / c, total: self.total / c, lr, grad_norm: self.norm }
    }
}

fn check_finite(total: f64, epoch: usize, what: &str) -> Result<()> {
    if total.is_finite() {
        Ok(())
    } else {
        Err(LhpfError::Diverged { epoch, detail: format!("{what} loss is {total}") })
    }
}

/// Trains the encoder, spatial decoder and heads on imitation (and optionally comfort) loss.
pub fn train_phase1(planner: &Planner, samples: &[Sample], cfg: &TrainConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(LhpfError::InvalidArgument("phase 1 needs at least one sample".into()));
    }
    let vars: Vec<Var> = planner.params.named_vars().into_iter().filter(|(n, _)| Planner::is_backbone_param(n)).map(|(_, v)| v).collect();
    let mut opt = optimizer(vars.clone(), cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let horizon = planner.config.decoder.horizon;
    let mut report = TrainReport::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let groups = batches(samples.len(), cfg.batch_size, &mut rng);
        let nb = groups.len();
        let mut acc = Accum::default();
        let mut lr = 0.0;
        for (bi, g) in groups.iter().enumerate() {
            lr = cfg.learning_rate(epoch as f64 + bi as f64 / nb as f64);
            opt.set_learning_rate(lr);
            let chosen: Vec<&Sample> = g.iter().map(|&i| &samples[i]).collect();
            let bundles: Vec<&FeatureBundle> = chosen.iter().map(|s| &s.bundle).collect();
            let batch = Batch::collate(&bundles)?;
            let target = target_tensor(&chosen, horizon)?;
            let index: Vec<u32> = chosen.iter().map(|s| s.target_index).collect();
            let ctx = ForwardCtx::train(cfg.dropout, cfg.seed ^ step.wrapping_mul(0x9e37_79b9));
            let out = planner.backbone(&batch, &ctx)?;
            let parts = plan_loss(&out.plan, &batch, &target, &index, cfg)?;
            let total = parts.total.to_scalar::<f64>()?;
            check_finite(total, epoch, "phase 1")?;
            let mut grads = parts.total.backward()?;
            let norm = clip_grads(&mut grads, &vars, cfg.grad_clip)?;
            opt.step(&grads)?;
            acc.add(&parts, total, norm, chosen.len() as f64);
            step += 1;
        }
        let rec = acc.finish(1, epoch, lr);
        on_epoch(&rec);
        report.epochs.push(rec);
    }
    Ok(report)
}

/// Frozen backbone outputs for one fixed group of samples.
struct FrozenBatch {
    members: Vec<usize>,
    batch: Batch,
    encoding: SceneEncoding,
    queries: Tensor,
    free: Tensor,
    history: Tensor,
    target: Tensor,
    index: Vec<u32>,
}

fn backbone_embedding(planner: &Planner, bundle: &FeatureBundle) -> Result<PlanningEmbedding> {
    let batch = Batch::collate(&[bundle])?;
    let out = planner.backbone(&batch, &ForwardCtx::eval())?;
    PlanningEmbedding::from_batch(&out.plan.embedding, &batch, 0, 0)
}

fn freeze_batch(planner: &Planner, samples: &[Sample], members: Vec<usize>) -> Result<FrozenBatch> {
    let chosen: Vec<&Sample> = members.iter().map(|&i| &samples[i]).collect();
    let bundles: Vec<&FeatureBundle> = chosen.iter().map(|s| &s.bundle).collect();
    let batch = Batch::collate(&bundles)?;
    let out = planner.backbone(&batch, &ForwardCtx::eval())?;
    let hist_cfg = &planner.config.history;
    let emb = out.plan.embedding.detach();
    let history = match hist_cfg.training_pool {
        PoolTrainingMode::Duplicate => {
            let k = hist_cfg.max_entries();
            let e = emb.unsqueeze(1)?;
            Tensor::cat(&vec![&e; k], 1)?
        }
        PoolTrainingMode::Logged => {
            let (_, _, l, d) = emb.dims4()?;
            let mut per_sample = Vec::with_capacity(chosen.len());
            for (b, s) in chosen.iter().enumerate() {
                // pool of K slots: current frame plus the logged past grid frames, zero where missing
                let mut pool = HistoryPool::new(usize::MAX, 1)?;
                let k = s.past.len() + 1;
                for (j, past) in s.past.iter().enumerate().rev() {
                    if let Some(pb) = past {
                        let mut pe = backbone_embedding(planner, pb)?;
                        pe.t_frame = k - 1 - j;
                        pool.push(pe)?;
                    }
                }
                let mut cur = PlanningEmbedding::from_batch(&emb, &batch, b, k)?;
                cur.t_frame = k;
                pool.push(cur)?;
                let aligned = pool.aligned(&batch.ref_ids[b], l, d)?.expect("current entry present");
                let missing = k - pool.len();
                let pad = Tensor::zeros((missing, batch.layout.ref_lines, l, d), emb.dtype(), emb.device())?;
                per_sample.push(Tensor::cat(&[&aligned, &pad], 0)?);
            }
            Tensor::stack(&per_sample, 0)?
        }
    };
    Ok(FrozenBatch {
        target: target_tensor(&chosen, planner.config.decoder.horizon)?,
        index: chosen.iter().map(|s| s.target_index).collect(),
        members,
        encoding: out.encoding.detach(),
        queries: out.queries.detach(),
        free: out.plan.free.detach(),
        history,
        batch,
    })
}

fn snapshot(planner: &Planner) -> Result<BTreeMap<String, Vec<u64>>> {
    planner
        .params
        .named_vars()
        .into_iter()
        .filter(|(n, _)| Planner::is_backbone_param(n))
        .map(|(n, v)| Ok((n, v.as_tensor().flatten_all()?.to_vec1::<f64>()?.into_iter().map(f64::to_bits).collect())))
        .collect()
}

/// Names of the parameters the second phase updates.
pub fn phase2_trainable(planner: &Planner) -> Vec<String> {
    planner.params.named_vars().into_iter().map(|(n, _)| n).filter(|n| n.starts_with(ST_PREFIX)).collect()
}

/// Trains fusion, spatio-temporal decoder and heads with the backbone frozen.
pub fn train_phase2(planner: &Planner, samples: &[Sample], cfg: &TrainConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(LhpfError::InvalidArgument("phase 2 needs at least one sample".into()));
    }
    let before = snapshot(planner)?;
    let vars: Vec<Var> = planner.params.vars_with_prefix(ST_PREFIX).into_iter().map(|(_, v)| v).collect();
    let mut opt = optimizer(vars.clone(), cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frozen: Vec<FrozenBatch> =
        batches(samples.len(), cfg.batch_size, &mut rng).into_iter().map(|m| freeze_batch(planner, samples, m)).collect::<Result<_>>()?;
    let mut report = TrainReport::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..frozen.len()).collect();
        order.shuffle(&mut rng);
        let mut acc = Accum::default();
        let mut lr = 0.0;
        for (bi, &fi) in order.iter().enumerate() {
            let fb = &frozen[fi];
            lr = cfg.learning_rate(epoch as f64 + bi as f64 / order.len() as f64);
            opt.set_learning_rate(lr);
            let ctx = ForwardCtx::train(cfg.dropout, cfg.seed ^ step.wrapping_mul(0x9e37_79b9));
            let q_st = planner.fusion.fuse(&fb.queries, Some(&fb.history))?;
            let plan = planner.decode_st(&q_st, &fb.batch, &fb.encoding, &fb.free, &ctx)?;
            let parts = plan_loss(&plan, &fb.batch, &fb.target, &fb.index, cfg)?;
            let total = parts.total.to_scalar::<f64>()?;
            check_finite(total, epoch, "phase 2")?;
            let mut grads = parts.total.backward()?;
            let norm = clip_grads(&mut grads, &vars, cfg.grad_clip)?;
            opt.step(&grads)?;
            acc.add(&parts, total, norm, fb.members.len() as f64);
            step += 1;
        }
        let rec = acc.finish(2, epoch, lr);
        on_epoch(&rec);
        report.epochs.push(rec);
    }
    let after = snapshot(planner)?;
    if let Some((name, _)) = before.iter().find(|(n, v)| after.get(*n) != Some(v)) {
        return Err(LhpfError::FrozenParameterChanged(name.clone()));
    }
    Ok(report)
}

/// Which branch [`evaluate_open_loop`] scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanBranch {
    Backbone,
    History,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopStats {
    pub reg: f64,
    pub cls: f64,
    /// Mean displacement of the selected plan from the expert, m.
    pub ade: f64,
    /// Mean displacement of the target-indexed candidate, m.
    pub target_ade: f64,
    pub samples: usize,
}

impl OpenLoopStats {
    pub fn imitation(&self) -> f64 {
        self.reg + self.cls
    }
}

/// Imitation loss and ADE in eval mode. The history branch uses the training pool mode.
pub fn evaluate_open_loop(planner: &Planner, samples: &[Sample], branch: PlanBranch, batch_size: usize) -> Result<OpenLoopStats> {
    if samples.is_empty() {
        return Err(LhpfError::InvalidArgument("no samples to evaluate".into()));
    }
    let cfg = TrainConfig { comfort: false, ..TrainConfig::default() };
    let horizon = planner.config.decoder.horizon;
    let (mut reg, mut cls, mut ade, mut tade) = (0.0, 0.0, 0.0, 0.0);
    for chunk in (0..samples.len()).collect::<Vec<_>>().chunks(batch_size.max(1)) {
        let fb = freeze_batch(planner, samples, chunk.to_vec())?;
        let plan = match branch {
            PlanBranch::Backbone => planner.emit_plan(&planner.decode_plan(&fb.queries, &fb.batch, &fb.encoding, &ForwardCtx::eval())?, &fb.encoding)?,
            PlanBranch::History => {
                let q_st = planner.fusion.fuse(&fb.queries, Some(&fb.history))?;
                planner.decode_st(&q_st, &fb.batch, &fb.encoding, &fb.free, &ForwardCtx::eval())?
            }
        };
        let parts = plan_loss(&plan, &fb.batch, &fb.target, &fb.index, &cfg)?;
        let n = chunk.len() as f64;
        reg += parts.reg * n;
        cls += parts.cls * n;
        let (traj, _, _) = flatten_candidates(&plan, &fb.batch)?;
        let chosen: Vec<f64> = gather_rows(&traj, &fb.index)?.flatten_all()?.to_vec1()?;
        for (k, res) in plan.to_results(&fb.batch)?.iter().enumerate() {
            let s = &samples[chunk[k]];
            let mut d_sel = 0.0;
            let mut d_tgt = 0.0;
            for t in 0..horizon {
                let (tx, ty) = (s.target[t * 6], s.target[t * 6 + 1]);
                let p = res.selected_trajectory[t];
                d_sel += (p[0] - tx).hypot(p[1] - ty);
                let o = (k * horizon + t) * 6;
                d_tgt += (chosen[o] - tx).hypot(chosen[o + 1] - ty);
            }
            ade += d_sel / horizon as f64;
            tade += d_tgt / horizon as f64;
        }
    }
    let n = samples.len() as f64;
    Ok(OpenLoopStats { reg: reg / n, cls: cls / n, ade: ade / n, target_ade: tade / n, samples: samples.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logged_future() -> (AgentState, Vec<AgentState>) {
        let bbox = crate::scenario::BBox::new(4.6, 2.0);
        let mk = |i: usize| AgentState::new(Vec2::new(i as f64, 0.01 * (i * i) as f64), 0.02 * i as f64, Vec2::new(10.0, 0.2 * i as f64), bbox);
        (mk(0), (1..=40).map(mk).collect())
    }

    #[test]
    fn zero_perturbation_rejoin_keeps_positions() {
        let (now, future) = logged_future();
        let p = Perturbation { pivot: now.position, dtheta: 0.0, shift: Vec2::ZERO };
        let out = rejoin(&future, &now, &p, 15);
        for (a, b) in out.iter().zip(&future) {
            assert_eq!(a.position, b.position);
        }
    }

    #[test]
    fn rejoin_lands_on_log_and_corrects_from_first_step() {
        let (now, future) = logged_future();
        let p = Perturbation { pivot: now.position, dtheta: 0.08, shift: Vec2::new(0.0, 0.7) };
        let out = rejoin(&future, &now, &p, 15);
        for (a, b) in out.iter().zip(&future).skip(15) {
            assert!(a.position.distance(b.position) < 1e-12);
        }
        let shifted = Perturbation { dtheta: 0.0, ..p };
        let out = rejoin(&future, &now, &shifted, 15);
        let gap = |i: usize| out[i].position.distance(future[i].position);
        assert!(gap(0) < 0.7 * 0.9);
        assert!((1..15).all(|i| gap(i) < gap(i - 1)));
    }

    #[test]
    fn augmented_samples_follow_unperturbed_ones() {
        let world = crate::scenario::generate_scenario(crate::scenario::ScenarioKind::Straight, 3).unwrap();
        let model = ModelConfig::desk();
        let plain = build_samples(std::slice::from_ref(&world), &model, 40).unwrap();
        let aug = Augmentation { copies: 2, ..Augmentation::default() };
        let both = build_augmented_samples(std::slice::from_ref(&world), &model, 40, &aug, 5).unwrap();
        assert_eq!(both.len(), 3 * plain.len());
        for (i, s) in plain.iter().enumerate() {
            assert_eq!(both[3 * i].target, s.target);
            assert_ne!(both[3 * i + 1].target, s.target);
        }
        let again = build_augmented_samples(std::slice::from_ref(&world), &model, 40, &aug, 5).unwrap();
        assert!(both.iter().zip(&again).all(|(a, b)| a.target == b.target));
    }

    #[test]
    fn lr_schedule_shape() {
        let cfg = TrainConfig { epochs: 10, warmup_epochs: 3, peak_lr: 1e-3, ..TrainConfig::default() };
        assert!(cfg.learning_rate(0.0) < cfg.learning_rate(1.0));
        assert!((cfg.learning_rate(3.0) - 1e-3).abs() < 1e-15);
        assert!(cfg.learning_rate(6.0) < 1e-3);
        assert!(cfg.learning_rate(10.0).abs() < 1e-15);
        for i in 0..100 {
            let p = i as f64 * 0.1;
            assert!(cfg.learning_rate(p) <= 1e-3 + 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { weights: LossWeights { reg: -1.0, ..LossWeights::default() }, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
