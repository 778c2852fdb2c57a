//! `lhpf` command-line driver.

mod config;
mod plot;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lhpf_core::ablation::{sweep, write_sweep_csv, AblationAxis, SweepSetup};
use lhpf_core::checkpoint::{load_checkpoint, load_into, save_checkpoint};
use lhpf_core::history::FusionMode;
use lhpf_core::model::Planner;
use lhpf_core::scenario::{load_dataset, save_dataset};
use lhpf_core::scenario::{generate_scenario, ScenarioKind, ScenarioWorld};
use lhpf_core::sim::episode::{run_episode_traced, BaselinePlanner, ExpertReplay, HistoryPlanner};
use lhpf_core::sim::report::{save_csv, save_jsonl};
use lhpf_core::sim::{EgoPlanner, EpisodeConfig, SimMode};
use lhpf_core::training::{build_samples, build_training_samples, evaluate_open_loop, train_phase1, train_phase2, PlanBranch};
use lhpf_core::LhpfError;
use rayon::prelude::*;

use config::{Preset, RunConfig};

pub const DATASET_FILE: &str = "scenarios.jsonl";

/// Error carrying the process exit code and an optional config field path.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn config(field: &str, message: String) -> Self {
        CliError { code: 3, kind: "config", field: (!field.is_empty()).then(|| field.to_string()), message }
    }

    pub fn missing(path: &Path, e: std::io::Error) -> Self {
        CliError { code: 3, kind: "missing_file", field: None, message: format!("{}: {e}", path.display()) }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError { code: 1, kind: "io", field: None, message: format!("{}: {e}", path.display()) }
    }

    pub fn usage(message: String) -> Self {
        CliError { code: 2, kind: "usage", field: None, message }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error code={} kind={}", self.code, self.kind)?;
        if let Some(field) = &self.field {
            write!(f, " field={field}")?;
        }
        write!(f, " message={:?}", self.message)
    }
}

impl From<LhpfError> for CliError {
    fn from(e: LhpfError) -> Self {
        let (code, kind) = match &e {
            LhpfError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => (3, "missing_file"),
            LhpfError::Io { .. } => (1, "io"),
            LhpfError::InvalidArgument(_) => (3, "config"),
            LhpfError::Parse { .. } | LhpfError::Checkpoint(_) => (3, "input"),
            LhpfError::Diverged { .. } => (1, "diverged"),
            LhpfError::FrozenParameterChanged(_) => (1, "frozen_parameter_changed"),
            _ => (1, "runtime"),
        };
        let message = e.to_string().lines().next().unwrap_or_default().to_string();
        CliError { code, kind, field: None, message }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "lhpf", version, about = "History-aware motion planner: data, training, simulation, ablations, plots")]
pub struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model and training defaults to start from.
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    #[arg(long, env = "LHPF_SEED")]
    seed: Option<u64>,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum PresetArg {
    Desk,
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenarios.
    GenData {
        #[arg(long, value_delimiter = ',', default_value = "straight,lane_change,intersection_turn,dense_traffic")]
        kinds: Vec<String>,
        /// Scenarios per kind.
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// First phase: backbone imitation training.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Second phase: history fusion and spatio-temporal decoder with the backbone frozen.
    Finetune {
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        interval: Option<usize>,
        #[arg(long)]
        fusion: Option<String>,
        /// on or off
        #[arg(long)]
        comfort: Option<String>,
        #[arg(long)]
        stride: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-loop simulation; writes a CSV with one row per scenario plus a summary row.
    Simulate {
        /// Checkpoint directory; not needed for the expert planner.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "reactive")]
        mode: String,
        /// history, baseline or expert
        #[arg(long, default_value = "history")]
        planner: String,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Directory for per-scenario trace files.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Open-loop imitation loss and displacement error against the expert.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// history or baseline
        #[arg(long, default_value = "history")]
        branch: String,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune and evaluate once per value of one setting.
    Ablate {
        #[arg(long)]
        backbone: PathBuf,
        /// fusion, interval, epochs or comfort
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "reactive")]
        mode: String,
        #[command(flatten)]
        common: Common,
    },
    /// Render line plots from result CSVs or bird's-eye snapshots from a trace file.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trace steps to render.
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
    },
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let preset = match common.preset {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Full => Preset::Full,
    };
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p, preset)?,
        None => RunConfig::preset(preset),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dataset_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(DATASET_FILE)
    } else {
        p.to_path_buf()
    }
}

fn read_dataset(p: &Path) -> CliResult<Vec<ScenarioWorld>> {
    let path = dataset_path(p);
    if !path.exists() {
        return Err(CliError::missing(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such dataset")));
    }
    Ok(load_dataset(&path)?)
}

fn named(worlds: Vec<ScenarioWorld>) -> Vec<(String, ScenarioWorld)> {
    worlds.into_iter().map(|w| (format!("{}-{}", w.kind.name(), w.seed), w)).collect()
}

fn parse_on_off(v: &str) -> CliResult<bool> {
    match v {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(CliError::usage(format!("expected on or off, got {v:?}"))),
    }
}

fn log_line(path: &Path, line: &str) {
    use std::io::Write;
    if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
        let _ = writeln!(f, "{line}");
    }
}

fn gen_data(kinds: &[String], count: usize, out: &Path, common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let kinds: Vec<ScenarioKind> = kinds.iter().map(|k| k.parse().map_err(|e: LhpfError| CliError::usage(e.to_string()))).collect::<CliResult<_>>()?;
    let jobs: Vec<(ScenarioKind, u64)> = kinds.iter().flat_map(|&k| (0..count as u64).map(move |i| (k, cfg.seed + i))).collect();
    let worlds: Vec<ScenarioWorld> = jobs.par_iter().map(|&(k, s)| generate_scenario(k, s)).collect::<lhpf_core::Result<_>>()?;
    let n = save_dataset(&worlds, &out.join(DATASET_FILE))?;
    cfg.write_beside(out)?;
    println!("wrote {n} scenarios to {}", out.join(DATASET_FILE).display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(data: &Path, out: &Path, epochs: Option<usize>, lr: Option<f64>, batch: Option<usize>, stride: Option<usize>, common: &Common) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    let t = &mut cfg.phase1;
    t.epochs = epochs.unwrap_or(t.epochs);
    t.peak_lr = lr.unwrap_or(t.peak_lr);
    t.batch_size = batch.unwrap_or(t.batch_size);
    t.window_stride = stride.unwrap_or(t.window_stride);
    t.seed = cfg.seed;
    cfg.model.seed = cfg.seed;
    cfg.validate()?;
    let worlds = read_dataset(data)?;
    let samples = build_training_samples(&worlds, &cfg.model, &cfg.phase1)?;
    let planner = Planner::new(cfg.model)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let log = out.join("train_log.jsonl");
    let _ = std::fs::remove_file(&log);
    let report = train_phase1(&planner, &samples, &cfg.phase1, &mut |r| log_line(&log, &r.to_json_line()))?;
    save_checkpoint(&planner, out, 1, serde_json::json!({ "samples": samples.len(), "dataset": data.display().to_string() }))?;
    cfg.write_beside(out)?;
    if let Some(last) = report.last() {
        println!("phase 1 done: epoch {} imitation {:.5} -> {}", last.epoch, last.imitation(), out.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finetune(
    backbone: &Path,
    data: &Path,
    out: &Path,
    epochs: Option<usize>,
    interval: Option<usize>,
    fusion: Option<&str>,
    comfort: Option<&str>,
    stride: Option<usize>,
    common: &Common,
) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    let (base, meta) = load_checkpoint(backbone)?;
    // the architecture comes from the backbone; pool settings from the config file if one was given
    let history = cfg.model.history;
    cfg.model = meta.model;
    if common.config.is_some() {
        cfg.model.history = history;
    }
    if let Some(i) = interval {
        cfg.model.history.interval = i;
    }
    if let Some(f) = fusion {
        cfg.model.history.fusion.mode = f.parse::<FusionMode>().map_err(|e| CliError::usage(e.to_string()))?;
    }
    let t = &mut cfg.phase2;
    t.epochs = epochs.unwrap_or(t.epochs);
    t.window_stride = stride.unwrap_or(t.window_stride);
    if let Some(c) = comfort {
        t.comfort = parse_on_off(c)?;
    }
    t.seed = cfg.seed;
    cfg.validate()?;
    let planner = Planner::new(cfg.model)?;
    planner.copy_params_from(&base)?;
    planner.init_st_from_backbone()?;
    let worlds = read_dataset(data)?;
    let samples = build_training_samples(&worlds, &cfg.model, &cfg.phase2)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let log = out.join("train_log.jsonl");
    let _ = std::fs::remove_file(&log);
    let report = train_phase2(&planner, &samples, &cfg.phase2, &mut |r| log_line(&log, &r.to_json_line()))?;
    save_checkpoint(&planner, out, 2, serde_json::json!({ "backbone": backbone.display().to_string(), "samples": samples.len() }))?;
    cfg.write_beside(out)?;
    if let Some(last) = report.last() {
        println!("phase 2 done: epoch {} imitation {:.5} -> {}", last.epoch, last.imitation(), out.display());
    }
    Ok(())
}

fn load_planner(ckpt: Option<&Path>) -> CliResult<Option<Planner>> {
    ckpt.map(|p| load_checkpoint(p).map(|(pl, _)| pl)).transpose().map_err(CliError::from)
}

#[allow(clippy::too_many_arguments)]
fn simulate(ckpt: Option<&Path>, mode: &str, planner_kind: &str, scenarios: &Path, report: &Path, traces: Option<&Path>, common: &Common) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    let mode: SimMode = mode.parse().map_err(|e: LhpfError| CliError::usage(e.to_string()))?;
    if !["history", "baseline", "expert"].contains(&planner_kind) {
        return Err(CliError::usage(format!("unknown planner {planner_kind:?}")));
    }
    let planner = if planner_kind == "expert" { None } else { load_planner(Some(ckpt.ok_or_else(|| CliError::usage("--ckpt is required for model planners".into()))?))? };
    if let Some(p) = &planner {
        cfg.model = p.config;
    }
    let worlds = named(read_dataset(scenarios)?);
    let ep = EpisodeConfig { mode, history_frames: cfg.model.history_frames, idm: cfg.idm, ..EpisodeConfig::default() };
    let results: Vec<_> = worlds
        .par_iter()
        .map(|(name, w)| {
            let mut p: Box<dyn EgoPlanner> = match (planner_kind, &planner) {
                ("history", Some(p)) => Box::new(HistoryPlanner::new(p)),
                ("baseline", Some(p)) => Box::new(BaselinePlanner { planner: p }),
                _ => Box::new(ExpertReplay),
            };
            run_episode_traced(w, name, p.as_mut(), &ep)
        })
        .collect::<lhpf_core::Result<_>>()?;
    let (reports, trace_list): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    save_csv(&reports, report)?;
    save_jsonl(&reports, &report.with_extension("jsonl"))?;
    if let Some(dir) = traces {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for ((name, w), t) in worlds.iter().zip(&trace_list) {
            let path = dir.join(format!("{name}.trace.json"));
            let text = serde_json::to_string(&plot::TraceFile { scenario: w.clone(), trace: t.clone() }).map_err(|e| CliError::usage(e.to_string()))?;
            std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        }
    }
    let dir = report.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    cfg.write_beside(dir)?;
    let s = lhpf_core::sim::report::summarize(&reports);
    println!("{} episodes, mean composite {:.3}, failed {}", s.episodes, s.metrics.composite_score, s.failed);
    Ok(())
}

fn evaluate(ckpt: &Path, data: &Path, branch: &str, stride: Option<usize>, out: Option<&Path>, common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let (planner, _) = load_checkpoint(ckpt)?;
    let branch = match branch {
        "history" => PlanBranch::History,
        "baseline" => PlanBranch::Backbone,
        _ => return Err(CliError::usage(format!("unknown branch {branch:?}"))),
    };
    let worlds = read_dataset(data)?;
    let samples = build_samples(&worlds, &planner.config, stride.unwrap_or(cfg.phase2.window_stride))?;
    let stats = evaluate_open_loop(&planner, &samples, branch, 32)?;
    let text = serde_json::to_string_pretty(&stats).expect("plain struct");
    match out {
        Some(p) => {
            std::fs::write(p, &text).map_err(|e| CliError::io(p, e))?;
            let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            RunConfig { model: planner.config, ..cfg }.write_beside(dir)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ablate(backbone: &Path, axis: &str, values: &[String], train: &Path, eval: &Path, out: &Path, mode: &str, common: &Common) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    let axis: AblationAxis = axis.parse().map_err(|e: LhpfError| CliError::usage(e.to_string()))?;
    let mode: SimMode = mode.parse().map_err(|e: LhpfError| CliError::usage(e.to_string()))?;
    let values = if values.is_empty() { axis.default_values() } else { values.to_vec() };
    let (base, _) = load_into(backbone, load_checkpoint(backbone)?.1.model)?;
    cfg.model = base.config;
    cfg.phase2.seed = cfg.seed;
    cfg.validate()?;
    let train_worlds = read_dataset(train)?;
    let eval_worlds = named(read_dataset(eval)?);
    let setup = SweepSetup {
        backbone: &base,
        train: &train_worlds,
        eval: &eval_worlds,
        train_cfg: cfg.phase2,
        episode: EpisodeConfig { mode, history_frames: cfg.model.history_frames, idm: cfg.idm, ..EpisodeConfig::default() },
    };
    let rows = sweep(axis, &values, &setup)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let f = std::fs::File::create(out).map_err(|e| CliError::io(out, e))?;
    write_sweep_csv(&rows, f)?;
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    cfg.write_beside(dir)?;
    println!("{} sweep points written to {}", rows.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::usage("--jobs must be at least 1".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenData { kinds, count, out, common } => gen_data(&kinds, count, &out, &common),
        Command::Train { data, out, epochs, lr, batch_size, stride, common } => train(&data, &out, epochs, lr, batch_size, stride, &common),
        Command::Finetune { backbone, data, out, epochs, interval, fusion, comfort, stride, common } => {
            finetune(&backbone, &data, &out, epochs, interval, fusion.as_deref(), comfort.as_deref(), stride, &common)
        }
        Command::Simulate { ckpt, mode, planner, scenarios, report, traces, common } => {
            simulate(ckpt.as_deref(), &mode, &planner, &scenarios, &report, traces.as_deref(), &common)
        }
        Command::Evaluate { ckpt, data, branch, stride, out, common } => evaluate(&ckpt, &data, &branch, stride, out.as_deref(), &common),
        Command::Ablate { backbone, axis, values, train, eval, out, mode, common } => ablate(&backbone, &axis, &values, &train, &eval, &out, &mode, &common),
        Command::Plot { input, out, frames } => plot::plot(&input, &out, &frames),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code)
        }
    }
}
