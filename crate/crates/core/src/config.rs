//! Run configuration: one TOML document covering the model, transforms,
//! optimization, dataset path and output directory.
//!
//! Unknown keys are rejected. Every run writes the fully resolved document
//! (defaults filled in, overrides applied) next to its outputs as
//! `config.resolved.toml`; running from that file reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::models::ModelSpec;
use crate::training::TrainConfig;
use crate::transforms::TransformConfig;
use crate::{Error, Result};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `SKL1` container; its splits live in the `.splits.json` sidecar.
    pub container: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            container: PathBuf::from("data/synth.skl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelSpec,
    pub transform: TransformConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: ModelSpec::default(),
            transform: TransformConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.transform.validate()?;
        self.train.validate()
    }

    /// Writes the resolved config into `output_dir` and returns its path.
    pub fn persist(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn empty_document_is_all_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg.train.base_lr, 0.1);
        assert_eq!(cfg.train.weight_decay, 5e-4);
        assert_eq!(cfg.train.epochs, 80);
        assert!(cfg.train.nesterov);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml("bogus = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[train]\nlr = 0.1"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partial_section_keeps_other_defaults() {
        let cfg =
            RunConfig::from_toml("[train]\nepochs = 3\n[model]\nvariant = \"stgcn\"").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.model.block_channels.len(), 10);
    }
}
