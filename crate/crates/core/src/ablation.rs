//! Ablation sweeps over fine-tuning settings and the plan-consistency diagnostic.

use std::collections::BTreeSet;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LhpfError, Result};
use crate::history::FusionMode;
use crate::model::Planner;
use crate::scenario::ScenarioWorld;
use crate::sim::episode::{run_suite, EpisodeConfig, HistoryPlanner, StepPlan};
use crate::sim::report::summarize;
use crate::training::{build_training_samples, train_phase2, TrainConfig};

/// Mean distance between the overlapping parts of successive plans: plan `t` points
/// `1..` against plan `t + 1` points `..len - 1`, both in world coordinates.
pub fn consistency_metric(plans: &[StepPlan]) -> Result<f64> {
    if plans.len() < 2 {
        return Err(LhpfError::UndefinedMetric(format!("consistency needs at least 2 plans, got {}", plans.len())));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for w in plans.windows(2) {
        let (a, b) = (&w[0].world, &w[1].world);
        let n = a.len().saturating_sub(1).min(b.len());
        if n == 0 {
            continue;
        }
        let d: f64 = (0..n).map(|i| (a[i + 1][0] - b[i][0]).hypot(a[i + 1][1] - b[i][1])).sum();
        total += d / n as f64;
        pairs += 1;
    }
    if pairs == 0 {
        return Err(LhpfError::UndefinedMetric("no overlapping plan pairs".into()));
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Fusion,
    Interval,
    Epochs,
    Comfort,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Fusion => "fusion",
            AblationAxis::Interval => "interval",
            AblationAxis::Epochs => "epochs",
            AblationAxis::Comfort => "comfort",
        }
    }

    /// Values swept when none are given.
    pub fn default_values(self) -> Vec<String> {
        let v: Vec<&str> = match self {
            AblationAxis::Fusion => vec!["sum", "attention"],
            AblationAxis::Interval => vec!["1", "5", "10", "20"],
            AblationAxis::Epochs => vec!["1", "2", "3", "4", "5", "6", "7", "8"],
            AblationAxis::Comfort => vec!["off", "on"],
        };
        v.into_iter().map(String::from).collect()
    }
}

impl FromStr for AblationAxis {
    type Err = LhpfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(AblationAxis::Fusion),
            "interval" => Ok(AblationAxis::Interval),
            "epochs" => Ok(AblationAxis::Epochs),
            "comfort" => Ok(AblationAxis::Comfort),
            _ => Err(LhpfError::InvalidArgument(format!("unknown ablation axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: AblationAxis,
    pub value: String,
    pub composite_score: f64,
    pub comfort: f64,
    pub progress: f64,
    pub consistency: Option<f64>,
    pub collision_free: f64,
    pub failed: bool,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(axis: AblationAxis, value: &str, e: LhpfError) -> Self {
        SweepRow {
            axis,
            value: value.to_string(),
            composite_score: 0.0,
            comfort: 0.0,
            progress: 0.0,
            consistency: None,
            collision_free: 0.0,
            failed: true,
            error: Some(e.to_string()),
        }
    }
}

pub struct SweepSetup<'a> {
    /// Phase-1 planner every sweep point starts from.
    pub backbone: &'a Planner,
    pub train: &'a [ScenarioWorld],
    pub eval: &'a [(String, ScenarioWorld)],
    pub train_cfg: TrainConfig,
    pub episode: EpisodeConfig,
}

fn parse_flag(v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(LhpfError::InvalidArgument(format!("expected on/off, got {v:?}"))),
    }
}

fn parse_count(v: &str) -> Result<usize> {
    v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| LhpfError::InvalidArgument(format!("expected a positive integer, got {v:?}")))
}

/// Validates the value before any training happens.
pub fn check_value(axis: AblationAxis, v: &str) -> Result<()> {
    match axis {
        AblationAxis::Fusion => FusionMode::from_str(v).map(|_| ()),
        AblationAxis::Interval | AblationAxis::Epochs => parse_count(v).map(|_| ()),
        AblationAxis::Comfort => parse_flag(v).map(|_| ()),
    }
}

/// Fine-tunes from the backbone with one setting changed, then evaluates closed loop.
pub fn run_point(axis: AblationAxis, value: &str, setup: &SweepSetup) -> Result<SweepRow> {
    let mut model = setup.backbone.config;
    let mut train = setup.train_cfg;
    match axis {
        AblationAxis::Fusion => model.history.fusion.mode = value.parse()?,
        AblationAxis::Interval => model.history.interval = parse_count(value)?,
        AblationAxis::Epochs => train.epochs = parse_count(value)?,
        AblationAxis::Comfort => train.comfort = parse_flag(value)?,
    }
    let planner = Planner::new(model)?;
    planner.copy_params_from(setup.backbone)?;
    planner.init_st_from_backbone()?;
    let samples = build_training_samples(setup.train, &model, &train)?;
    train_phase2(&planner, &samples, &train, &mut |_| {})?;
    let reports = run_suite(setup.eval, &setup.episode, || Box::new(HistoryPlanner::new(&planner)))?;
    let s = summarize(&reports);
    Ok(SweepRow {
        axis,
        value: value.to_string(),
        composite_score: s.metrics.composite_score,
        comfort: s.metrics.comfort_ok,
        progress: s.metrics.progress_ratio,
        consistency: s.consistency,
        collision_free: s.metrics.at_fault_collision_free,
        failed: s.failed > 0,
        error: (s.failed > 0).then(|| format!("{} of {} episodes failed", s.failed, s.episodes)),
    })
}

/// One row per value, in input order. A failing point is recorded and the sweep continues.
pub fn sweep(axis: AblationAxis, values: &[String], setup: &SweepSetup) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(LhpfError::InvalidArgument("sweep needs at least one value".into()));
    }
    for v in values {
        check_value(axis, v)?;
    }
    let train_ids: BTreeSet<(String, u64)> = setup.train.iter().map(|w| (w.kind.name().to_string(), w.seed)).collect();
    if let Some((name, _)) = setup.eval.iter().find(|(_, w)| train_ids.contains(&(w.kind.name().to_string(), w.seed))) {
        return Err(LhpfError::InvalidArgument(format!("evaluation scenario {name} also appears in the training set")));
    }
    Ok(values.par_iter().map(|v| run_point(axis, v, setup).unwrap_or_else(|e| SweepRow::failed(axis, v, e))).collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| LhpfError::InvalidArgument(format!("csv: {e}"));
    w.write_record(["axis", "value", "composite_score", "comfort", "progress", "consistency", "collision_free", "failed", "error"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.axis.name().to_string(),
            r.value.clone(),
            r.composite_score.to_string(),
            r.comfort.to_string(),
            r.progress.to_string(),
            r.consistency.map(|c| c.to_string()).unwrap_or_default(),
            r.collision_free.to_string(),
            r.failed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| LhpfError::InvalidArgument(format!("csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn plan(frame: usize, pts: &[(f64, f64)]) -> StepPlan {
        StepPlan { frame, world: pts.iter().map(|&(x, y)| [x, y, 1.0, 0.0, 0.0, 0.0]).collect(), selected: None, scores: vec![] }
    }

    /// World-fixed path sampled from `start`.
    fn fixed(frame: usize, start: usize, offset: (f64, f64)) -> StepPlan {
        let pts: Vec<(f64, f64)> = (start..start + 10).map(|i| (i as f64 + offset.0, 0.1 * (i as f64).powi(2) + offset.1)).collect();
        plan(frame, &pts)
    }

    #[test]
    fn fixed_world_trajectory_is_consistent() {
        let plans: Vec<StepPlan> = (0..20).map(|t| fixed(t, t + 1, (0.0, 0.0))).collect();
        assert_eq!(consistency_metric(&plans).unwrap(), 0.0);
    }

    #[test]
    fn constant_lateral_offset() {
        let plans: Vec<StepPlan> = (0..20).map(|t| fixed(t, t + 1, (0.0, if t % 2 == 0 { 0.0 } else { 0.5 }))).collect();
        assert!((consistency_metric(&plans).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn needs_two_plans() {
        assert!(matches!(consistency_metric(&[fixed(0, 1, (0.0, 0.0))]), Err(LhpfError::UndefinedMetric(_))));
    }

    #[test]
    fn random_walk_matches_rayleigh_mean() {
        // offsets follow a 2-D Gaussian random walk, so successive overlaps differ by a
        // Rayleigh-distributed distance with mean sigma * sqrt(pi / 2)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sigma in [0.1, 0.5, 2.0] {
            let n = Normal::new(0.0, sigma).unwrap();
            let mut off = (0.0, 0.0);
            let mut plans = Vec::new();
            for t in 0..4000 {
                plans.push(fixed(t, t + 1, off));
                off = (off.0 + n.sample(&mut rng), off.1 + n.sample(&mut rng));
            }
            let got = consistency_metric(&plans).unwrap();
            let expected = sigma * (std::f64::consts::PI / 2.0).sqrt();
            assert!((got - expected).abs() / expected < 0.1, "sigma {sigma}: {got} vs {expected}");
        }
    }

    #[test]
    fn axis_values() {
        assert_eq!(AblationAxis::Interval.default_values().len(), 4);
        assert_eq!(AblationAxis::Epochs.default_values().len(), 8);
        assert!(check_value(AblationAxis::Fusion, "attention").is_ok());
        assert!(check_value(AblationAxis::Interval, "0").is_err());
        assert!(check_value(AblationAxis::Comfort, "maybe").is_err());
    }
}
