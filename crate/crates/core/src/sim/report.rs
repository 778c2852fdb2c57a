//! Metrics CSV: one row per episode plus a trailing mean row.

use std::io::Write;
use std::path::Path;

use crate::error::{LhpfError, Result};
use crate::sim::episode::SimReport;
use crate::sim::metrics::Metrics;

pub const CSV_HEADER: [&str; 16] = [
    "scenario",
    "kind",
    "seed",
    "mode",
    "planner",
    "steps",
    "failed",
    "at_fault_collision_free",
    "drivable_compliance",
    "progress_ratio",
    "comfort_ok",
    "speed_compliance",
    "direction_compliance",
    "composite_score",
    "consistency",
    "error",
];

/// Mean metrics and mean consistency (over episodes that have one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub metrics: Metrics,
    pub consistency: Option<f64>,
    pub episodes: usize,
    pub failed: usize,
}

pub fn summarize(reports: &[SimReport]) -> Summary {
    let n = reports.len().max(1) as f64;
    let mut m = Metrics::zero();
    for r in reports {
        let x = &r.metrics;
        m.at_fault_collision_free += x.at_fault_collision_free / n;
        m.drivable_compliance += x.drivable_compliance / n;
        m.progress_ratio += x.progress_ratio / n;
        m.comfort_ok += x.comfort_ok / n;
        m.speed_compliance += x.speed_compliance / n;
        m.direction_compliance += x.direction_compliance / n;
        m.composite_score += x.composite_score / n;
    }
    let cs: Vec<f64> = reports.iter().filter_map(|r| r.consistency).collect();
    Summary {
        metrics: m,
        consistency: (!cs.is_empty()).then(|| cs.iter().sum::<f64>() / cs.len() as f64),
        episodes: reports.len(),
        failed: reports.iter().filter(|r| r.failed).count(),
    }
}

fn metric_fields(m: &Metrics) -> [String; 7] {
    [
        m.at_fault_collision_free.to_string(),
        m.drivable_compliance.to_string(),
        m.progress_ratio.to_string(),
        m.comfort_ok.to_string(),
        m.speed_compliance.to_string(),
        m.direction_compliance.to_string(),
        m.composite_score.to_string(),
    ]
}

pub fn write_csv<W: Write>(reports: &[SimReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| LhpfError::InvalidArgument(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in reports {
        let mut row = vec![r.scenario.clone(), r.kind.clone(), r.seed.to_string(), r.mode.name().into(), r.planner.clone(), r.steps.to_string(), r.failed.to_string()];
        row.extend(metric_fields(&r.metrics));
        row.push(r.consistency.map(|c| c.to_string()).unwrap_or_default());
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row).map_err(err)?;
    }
    let s = summarize(reports);
    let mode = reports.first().map(|r| r.mode.name()).unwrap_or("");
    let planner = reports.first().map(|r| r.planner.as_str()).unwrap_or("");
    let mut row = vec!["summary".to_string(), String::new(), String::new(), mode.into(), planner.into(), String::new(), s.failed.to_string()];
    row.extend(metric_fields(&s.metrics));
    row.push(s.consistency.map(|c| c.to_string()).unwrap_or_default());
    row.push(String::new());
    w.write_record(&row).map_err(err)?;
    w.flush().map_err(|e| LhpfError::InvalidArgument(format!("csv: {e}")))?;
    Ok(())
}

pub fn save_csv(reports: &[SimReport], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LhpfError::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| LhpfError::io(path, e))?;
    write_csv(reports, std::io::BufWriter::new(f))
}

/// Line-delimited JSON, one report per line.
pub fn save_jsonl(reports: &[SimReport], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in reports {
        text.push_str(&serde_json::to_string(r).map_err(|e| LhpfError::InvalidArgument(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| LhpfError::io(path, e))
}
