//! The dual-branch attention CNN and the comparison models.
//!
//! Networks are described by a [`ModelSpec`], materialized by [`build`]
//! into a flat list of named parameters, and evaluated by [`forward`] on a
//! [`Tape`](crate::tensor::Tape). The same layer code runs at build time
//! on a dummy input, which both allocates parameters in a fixed order and
//! verifies the shape chain.

mod lda;
mod net;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{default_occipital_mask, FormatError, MaskError, MaskSpec, N_CHANNELS, N_SAMPLES};
use crate::tensor::checkpoint::CheckpointError;
use crate::tensor::{AdamConfig, TensorError};

pub use lda::{lda_fit, lda_predict, LdaModel};
pub use net::{
    build, forward, load_params, save_params, transfer_adapt, ForwardOutput, ModelParams, Param,
    BLOCK_CHAIN,
};
pub use train::{
    argmax_rows, fit, fit_spec, predict, predict_logits, predict_trained, FitOptions, TrainReport,
    Trained,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("architecture check failed: {0}")]
    Architecture(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Data(#[from] FormatError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("class {0} has no training trials")]
    ClassAbsent(usize),
    #[error("LDA needs at least {needed} trials, got {got}")]
    TooFewTrials { needed: usize, got: usize },
    #[error("covariance estimate is not positive definite")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    AttentionCnn,
    PlainCnn,
    ShallowConvnet,
    Lstm,
    LstmCnn,
    Lda,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::AttentionCnn,
        ModelKind::PlainCnn,
        ModelKind::ShallowConvnet,
        ModelKind::Lstm,
        ModelKind::LstmCnn,
        ModelKind::Lda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::AttentionCnn => "attention_cnn",
            ModelKind::PlainCnn => "plain_cnn",
            ModelKind::ShallowConvnet => "shallow_convnet",
            ModelKind::Lstm => "lstm",
            ModelKind::LstmCnn => "lstm_cnn",
            ModelKind::Lda => "lda",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Trained by gradient descent (everything but LDA).
    pub fn is_network(self) -> bool {
        self != ModelKind::Lda
    }
}

/// Optimizer and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub dropout: f64,
    /// Seed for standalone training; cross-validation derives per-fold seeds.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 64,
            adam: AdamConfig::default(),
            dropout: 0.5,
            seed: 0,
        }
    }
}

/// Shallow ConvNet geometry for 62.5 Hz input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShallowConfig {
    pub filters: usize,
    pub temporal_kernel: usize,
    pub pool: usize,
    pub stride: usize,
}

impl Default for ShallowConfig {
    fn default() -> Self {
        ShallowConfig {
            filters: 40,
            temporal_kernel: 13,
            pool: 9,
            stride: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig { layers: 2, hidden: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: ModelKind,
    pub n_classes: usize,
    #[serde(default)]
    pub mask: Option<MaskSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub shallow: ShallowConfig,
    #[serde(default)]
    pub lstm: LstmConfig,
    #[serde(default = "default_channels")]
    pub n_channels: usize,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
}

fn default_channels() -> usize {
    N_CHANNELS
}

fn default_samples() -> usize {
    N_SAMPLES
}

impl ModelSpec {
    /// Default hyperparameters; the attention variant gets the shipped occipital mask.
    pub fn new(variant: ModelKind, n_classes: usize) -> Self {
        ModelSpec {
            variant,
            n_classes,
            mask: (variant == ModelKind::AttentionCnn).then(default_occipital_mask),
            train: TrainConfig::default(),
            shallow: ShallowConfig::default(),
            lstm: LstmConfig::default(),
            n_channels: N_CHANNELS,
            n_samples: N_SAMPLES,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Spec(m));
        if self.n_classes != 6 && self.n_classes != 72 {
            return bad(format!("n_classes must be 6 or 72, got {}", self.n_classes));
        }
        match (&self.mask, self.variant) {
            (None, ModelKind::AttentionCnn) => return bad("attention_cnn requires a mask".into()),
            (Some(m), ModelKind::AttentionCnn) => m.validate(self.n_channels)?,
            (Some(_), v) => return bad(format!("{} does not take a mask", v.name())),
            (None, _) => {}
        }
        if self.train.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.train.adam.learning_rate > 0.0) {
            return bad("learning rate must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.train.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.train.dropout));
        }
        if self.n_channels == 0 || self.n_samples == 0 {
            return bad("empty input geometry".into());
        }
        Ok(())
    }
}
