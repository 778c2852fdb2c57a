//! Run configuration file (TOML) and its validation.

use std::path::Path;

use lhpf_core::model::ModelConfig;
use lhpf_core::sim::idm::IdmParams;
use lhpf_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub phase1: TrainConfig,
    pub phase2: TrainConfig,
    pub idm: IdmParams,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let model = match p {
            Preset::Desk => ModelConfig::desk(),
            Preset::Full => ModelConfig::default(),
        };
        let (phase1, phase2) = match p {
            Preset::Desk => (TrainConfig::desk_phase1(), TrainConfig::desk_phase2()),
            Preset::Full => (TrainConfig::phase1(), TrainConfig::phase2()),
        };
        RunConfig { seed: 0, model, phase1, phase2, idm: IdmParams::default() }
    }

    /// Reads a config file. Keys missing from the file keep the preset's values.
    pub fn load(path: &Path, preset: Preset) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        let mut base = toml::Value::try_from(RunConfig::preset(preset)).map_err(|e| CliError::config("", e.to_string()))?;
        let over: toml::Value = toml::from_str(&text).map_err(|e| CliError::config(&path.display().to_string(), e.to_string()))?;
        merge(&mut base, over);
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| CliError::config(&path.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        let checks: [(&str, lhpf_core::Result<()>); 6] = [
            ("model.encoder", m.encoder.validate()),
            ("model.decoder", m.decoder.validate()),
            ("model.history", m.history.validate(m.encoder.hidden_dim)),
            ("model", m.validate()),
            ("phase1", self.phase1.validate()),
            ("phase2", self.phase2.validate()),
        ];
        for (field, r) in checks {
            if let Err(e) = r {
                return Err(CliError::config(field, e.to_string()));
            }
        }
        let p = &self.idm;
        if [p.time_headway, p.max_accel, p.comfortable_decel, p.min_gap, p.exponent, p.emergency_decel].iter().any(|v| !(*v > 0.0)) {
            return Err(CliError::config("idm", "all IDM parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn write_beside(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("effective_config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for p in [Preset::Desk, Preset::Full] {
            let c = RunConfig::preset(p);
            c.validate().unwrap();
            let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn partial_file_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 9\n[phase2]\nepochs = 3\n").unwrap();
        let c = RunConfig::load(&path, Preset::Desk).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.phase2.epochs, 3);
        assert_eq!(c.model, RunConfig::preset(Preset::Desk).model);
    }

    #[test]
    fn bad_value_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[model.encoder]\nnum_heads = 5\n").unwrap();
        let e = RunConfig::load(&path, Preset::Desk).unwrap_err();
        assert_eq!(e.code, 3);
        assert!(e.field.as_deref() == Some("model.encoder"), "{e:?}");
    }
}
