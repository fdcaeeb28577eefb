//! Run configuration: JSON file merged with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use objdecode::datamodel::{EegDataset, MaskSpec};
use objdecode::models::{LstmConfig, ModelKind, ModelSpec, ShallowConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bad input from the operator; maps to exit code 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Everything a model command needs, after flags have been applied.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Vec<PathBuf>,
    /// Model names; commands that train a single model use the first.
    pub methods: Vec<String>,
    pub classes: usize,
    pub mask: Option<PathBuf>,
    pub folds: usize,
    pub seed: u64,
    pub threads: usize,
    pub precision: Precision,
    /// Replaces `train.epochs` for every method.
    pub epochs: Option<usize>,
    pub train: TrainConfig,
    pub shallow: ShallowConfig,
    pub lstm: LstmConfig,
    pub fine_tune_epochs: Option<usize>,
    /// Permute trial labels before evaluating, as a chance-level control.
    pub shuffle_labels: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: Vec::new(),
            methods: vec![ModelKind::AttentionCnn.name().to_string()],
            classes: 6,
            mask: None,
            folds: 10,
            seed: 0,
            threads: 1,
            precision: Precision::F32,
            epochs: None,
            train: TrainConfig::default(),
            shallow: ShallowConfig::default(),
            lstm: LstmConfig::default(),
            fine_tune_epochs: None,
            shuffle_labels: false,
            out: None,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))
}

/// JSON config from `path`, or the type's defaults.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

impl RunConfig {
    pub fn check(&self) -> anyhow::Result<()> {
        if self.classes != 6 && self.classes != 72 {
            return Err(config_err(format!("--classes must be 6 or 72, got {}", self.classes)));
        }
        if self.precision == Precision::F64 {
            return Err(config_err(
                "training and evaluation run at f32; f64 is available for gradcheck",
            ));
        }
        if self.threads == 0 {
            return Err(config_err("--threads must be at least 1"));
        }
        if self.data.is_empty() {
            return Err(config_err("no dataset given (--data or \"data\" in the config)"));
        }
        if self.methods.is_empty() {
            return Err(config_err("no methods given"));
        }
        for m in &self.methods {
            ModelKind::parse(m).ok_or_else(|| {
                let known: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                config_err(format!("unknown method {m:?}; expected one of {}", known.join(", ")))
            })?;
        }
        Ok(())
    }

    pub fn out_dir(&self) -> anyhow::Result<&Path> {
        self.out.as_deref().ok_or_else(|| config_err("--out is required"))
    }

    /// One spec per method, sized to `d` and carrying the configured mask.
    pub fn specs(&self, d: &EegDataset) -> anyhow::Result<Vec<ModelSpec>> {
        let mask = match &self.mask {
            Some(p) => Some(MaskSpec::load(p, d.n_channels()).map_err(|e| config_err(format!("mask {}: {e}", p.display())))?),
            None => None,
        };
        self.methods
            .iter()
            .map(|m| {
                let kind = ModelKind::parse(m).ok_or_else(|| config_err(format!("unknown method {m:?}")))?;
                let mut spec = ModelSpec::new(kind, self.classes);
                spec.train = self.train.clone();
                spec.train.seed = self.seed;
                if let Some(e) = self.epochs {
                    spec.train.epochs = e;
                }
                spec.shallow = self.shallow.clone();
                spec.lstm = self.lstm.clone();
                spec.n_channels = d.n_channels();
                spec.n_samples = d.n_samples();
                if kind == ModelKind::AttentionCnn {
                    if let Some(m) = &mask {
                        spec.mask = Some(m.clone());
                    }
                }
                spec.validate().map_err(|e| config_err(e.to_string()))?;
                Ok(spec)
            })
            .collect()
    }
}
