//! Checkpoint directories: `params.safetensors` with every named parameter and
//! `checkpoint.json` with the format version, phase and configs.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{LhpfError, Result};
use crate::model::{ModelConfig, Planner};
use crate::nn::device;

pub const CHECKPOINT_FORMAT: &str = "lhpf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const PARAMS_FILE: &str = "params.safetensors";
pub const META_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    /// 1 after backbone training, 2 after fine-tuning.
    pub phase: u8,
    pub model: ModelConfig,
    /// Free-form record of how the checkpoint was produced.
    #[serde(default)]
    pub provenance: serde_json::Value,
}

pub fn save_checkpoint(planner: &Planner, dir: &Path, phase: u8, provenance: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LhpfError::io(dir, e))?;
    let tensors: HashMap<String, Tensor> = planner.params.named_vars().into_iter().map(|(n, v)| (n, v.as_tensor().clone())).collect();
    let params = dir.join(PARAMS_FILE);
    candle_core::safetensors::save(&tensors, &params).map_err(|e| LhpfError::Checkpoint(format!("{}: {e}", params.display())))?;
    let meta = CheckpointMeta { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, phase, model: planner.config, provenance };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| LhpfError::Checkpoint(e.to_string()))?;
    let path = dir.join(META_FILE);
    fs::write(&path, text).map_err(|e| LhpfError::io(&path, e))
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| LhpfError::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| LhpfError::parse(path.display().to_string(), e.to_string()))?;
    if meta.format != CHECKPOINT_FORMAT || meta.version != CHECKPOINT_VERSION {
        return Err(LhpfError::Checkpoint(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            meta.format,
            meta.version
        )));
    }
    Ok(meta)
}

fn read_params(dir: &Path) -> Result<HashMap<String, Tensor>> {
    let path = dir.join(PARAMS_FILE);
    if !path.exists() {
        return Err(LhpfError::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "missing parameter file")));
    }
    candle_core::safetensors::load(&path, &device()).map_err(|e| LhpfError::Checkpoint(format!("{}: {e}", path.display())))
}

/// Rebuilds the planner exactly as saved. Every parameter must be present.
pub fn load_checkpoint(dir: &Path) -> Result<(Planner, CheckpointMeta)> {
    let meta = read_meta(dir)?;
    let planner = Planner::new(meta.model)?;
    let stored = read_params(dir)?;
    for (name, _) in planner.params.named_vars() {
        let t = stored.get(&name).ok_or_else(|| LhpfError::Checkpoint(format!("{}: parameter {name} missing", dir.display())))?;
        planner.params.assign(&name, t)?;
    }
    Ok((planner, meta))
}

/// Builds a planner from `config` and copies every stored parameter whose name it knows.
/// Returns the names that kept their fresh initialization.
pub fn load_into(dir: &Path, config: ModelConfig) -> Result<(Planner, Vec<String>)> {
    let planner = Planner::new(config)?;
    let stored = read_params(dir)?;
    let mut fresh = Vec::new();
    for (name, _) in planner.params.named_vars() {
        match stored.get(&name) {
            Some(t) => planner.params.assign(&name, t)?,
            None => fresh.push(name),
        }
    }
    Ok((planner, fresh))
}
