//! Line-delimited dataset files.
//!
//! ```text
//! lhpf-scenarios v1
//! {"index":0,"total":3,"scenario":{...}}
//! {"index":1,"total":3,"scenario":{...}}
//! ...
//! ```
//!
//! Every record repeats the total count so a truncated file is detected rather
//! than silently loaded short. Floats are written in shortest round-trip form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioWorld;
use crate::error::{LhpfError, Result};

pub const DATASET_HEADER: &str = "lhpf-scenarios v1";

#[derive(Serialize)]
struct RecordOut<'a> {
    index: usize,
    total: usize,
    scenario: &'a ScenarioWorld,
}

#[derive(Deserialize)]
struct RecordIn {
    index: usize,
    total: usize,
    scenario: ScenarioWorld,
}

/// Writes `scenarios` to `path` and returns how many were written.
pub fn save_dataset(scenarios: &[ScenarioWorld], path: &Path) -> Result<usize> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| LhpfError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| LhpfError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| LhpfError::io(path, e);
    writeln!(w, "{DATASET_HEADER}").map_err(io_err)?;
    for (index, scenario) in scenarios.iter().enumerate() {
        let rec = RecordOut { index, total: scenarios.len(), scenario };
        serde_json::to_writer(&mut w, &rec).map_err(|e| LhpfError::parse(path.display().to_string(), e.to_string()))?;
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(scenarios.len())
}

pub fn load_dataset(path: &Path) -> Result<Vec<ScenarioWorld>> {
    let file = File::open(path).map_err(|e| LhpfError::io(path, e))?;
    let ctx = path.display().to_string();
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| LhpfError::parse(&ctx, "empty file, missing header"))?
        .map_err(|e| LhpfError::io(path, e))?;
    if header.trim_end() != DATASET_HEADER {
        return Err(LhpfError::parse(&ctx, format!("bad header '{header}', expected '{DATASET_HEADER}'")));
    }
    let mut out = Vec::new();
    let mut expected_total = None;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| LhpfError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line)
            .map_err(|e| LhpfError::parse(format!("{ctx} record {} (line {})", out.len(), i + 2), e.to_string()))?;
        if rec.index != out.len() || expected_total.is_some_and(|t| t != rec.total) {
            return Err(LhpfError::parse(
                format!("{ctx} record {} (line {})", out.len(), i + 2),
                format!("record index {} of {} out of sequence", rec.index, rec.total),
            ));
        }
        expected_total = Some(rec.total);
        rec.scenario.validate().map_err(|e| LhpfError::parse(format!("{ctx} record {}", rec.index), e.to_string()))?;
        out.push(rec.scenario);
    }
    if let Some(total) = expected_total {
        if out.len() != total {
            return Err(LhpfError::parse(&ctx, format!("truncated: {} of {total} records present", out.len())));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, ScenarioKind};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let xs: Vec<_> = ScenarioKind::ALL.iter().take(3).map(|&k| generate_scenario(k, 4).unwrap()).collect();
        assert_eq!(save_dataset(&xs, &path).unwrap(), 3);
        let ys = load_dataset(&path).unwrap();
        assert_eq!(xs, ys);
    }

    #[test]
    fn empty_list_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        save_dataset(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{DATASET_HEADER}\n"));
        assert!(load_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn truncation_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let xs: Vec<_> = (0..3).map(|s| generate_scenario(ScenarioKind::Straight, s).unwrap()).collect();
        save_dataset(&xs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();

        // drop the final record
        std::fs::write(&path, lines[..3].join("\n")).unwrap();
        assert!(matches!(load_dataset(&path), Err(LhpfError::Parse { .. })));

        // cut a record mid-way
        let cut = format!("{}\n{}\n{}", lines[0], lines[1], &lines[2][..lines[2].len() / 2]);
        std::fs::write(&path, cut).unwrap();
        match load_dataset(&path) {
            Err(LhpfError::Parse { context, .. }) => assert!(context.contains("record 1"), "{context}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
