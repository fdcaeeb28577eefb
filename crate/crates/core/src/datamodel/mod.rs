//! Trial container, on-disk formats, channel masks and the synthetic
//! evoked-response generator.
//!
//! An [`EegDataset`] holds `[trial][channel][sample]` values as `f32` with
//! one exemplar label per trial; the category is always `exemplar / 12`,
//! so only exemplar labels are stored.

pub mod container;
mod mask;
mod synth;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

pub use container::{
    load_dataset, read_dataset, read_dataset_header, save_dataset, write_dataset, DatasetHeader,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use mask::{apply_mask, default_occipital_mask, MaskError, MaskSpec};
pub use synth::{
    default_templates, synth_continuous, synth_generate, CategoryTemplate, ContinuousSynthConfig,
    OffMaskNoise, SynthConfig,
};

pub const N_CATEGORIES: usize = 6;
pub const EXEMPLARS_PER_CATEGORY: usize = 12;
pub const N_EXEMPLARS: usize = N_CATEGORIES * EXEMPLARS_PER_CATEGORY;
/// Channel and sample counts of a model-ready trial.
pub const N_CHANNELS: usize = 124;
pub const N_SAMPLES: usize = 32;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("payload truncated while reading {0}")]
    Truncated(&'static str),
    #[error("trial {trial}: exemplar label {label} outside 0..72")]
    LabelRange { trial: usize, label: u16 },
    #[error("trial {trial}, channel {channel}: non-finite value")]
    NonFinite { trial: usize, channel: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Which label a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Category,
    Exemplar,
}

impl LabelKind {
    pub fn n_classes(self) -> usize {
        match self {
            LabelKind::Category => N_CATEGORIES,
            LabelKind::Exemplar => N_EXEMPLARS,
        }
    }

    pub fn from_n_classes(n: usize) -> Option<Self> {
        match n {
            N_CATEGORIES => Some(LabelKind::Category),
            N_EXEMPLARS => Some(LabelKind::Exemplar),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EegDataset {
    subject_id: String,
    sampling_rate_hz: f64,
    channel_names: Vec<String>,
    n_samples: usize,
    exemplar_labels: Vec<u16>,
    data: Vec<f32>,
}

impl EegDataset {
    pub fn new(
        subject_id: impl Into<String>,
        sampling_rate_hz: f64,
        channel_names: Vec<String>,
        n_samples: usize,
        exemplar_labels: Vec<u16>,
        data: Vec<f32>,
    ) -> Result<Self, FormatError> {
        let d = EegDataset {
            subject_id: subject_id.into(),
            sampling_rate_hz,
            channel_names,
            n_samples,
            exemplar_labels,
            data,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(FormatError::Invalid(format!("sampling rate {}", self.sampling_rate_hz)));
        }
        let per_trial = self.n_channels() * self.n_samples;
        if self.data.len() != self.exemplar_labels.len() * per_trial {
            return Err(FormatError::Invalid(format!(
                "{} values for {} trials of {} x {}",
                self.data.len(),
                self.exemplar_labels.len(),
                self.n_channels(),
                self.n_samples
            )));
        }
        if let Some((trial, &label)) = self
            .exemplar_labels
            .iter()
            .enumerate()
            .find(|(_, &l)| usize::from(l) >= N_EXEMPLARS)
        {
            return Err(FormatError::LabelRange { trial, label });
        }
        if per_trial > 0 {
            if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
                return Err(FormatError::NonFinite {
                    trial: pos / per_trial,
                    channel: (pos % per_trial) / self.n_samples,
                });
            }
        }
        Ok(())
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn n_trials(&self) -> usize {
        self.exemplar_labels.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// True for the `124 x 32` trials the models consume.
    pub fn is_model_ready(&self) -> bool {
        self.n_channels() == N_CHANNELS && self.n_samples == N_SAMPLES
    }

    pub fn exemplar_labels(&self) -> &[u16] {
        &self.exemplar_labels
    }

    pub fn category(&self, trial: usize) -> usize {
        usize::from(self.exemplar_labels[trial]) / EXEMPLARS_PER_CATEGORY
    }

    pub fn category_labels(&self) -> Vec<usize> {
        (0..self.n_trials()).map(|i| self.category(i)).collect()
    }

    pub fn labels(&self, kind: LabelKind) -> Vec<usize> {
        match kind {
            LabelKind::Category => self.category_labels(),
            LabelKind::Exemplar => self.exemplar_labels.iter().map(|&l| usize::from(l)).collect(),
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// `[channel][sample]` values of one trial.
    pub fn trial(&self, i: usize) -> &[f32] {
        let n = self.n_channels() * self.n_samples;
        &self.data[i * n..(i + 1) * n]
    }

    /// Same trials with replacement exemplar labels.
    pub fn with_exemplar_labels(&self, labels: Vec<u16>) -> Result<Self, FormatError> {
        if labels.len() != self.n_trials() {
            return Err(FormatError::Invalid(format!(
                "{} labels for {} trials",
                labels.len(),
                self.n_trials()
            )));
        }
        EegDataset::new(
            self.subject_id.clone(),
            self.sampling_rate_hz,
            self.channel_names.clone(),
            self.n_samples,
            labels,
            self.data.clone(),
        )
    }

    /// Trials `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> EegDataset {
        let mut data = Vec::with_capacity(indices.len() * self.n_channels() * self.n_samples);
        for &i in indices {
            data.extend_from_slice(self.trial(i));
        }
        EegDataset {
            subject_id: self.subject_id.clone(),
            sampling_rate_hz: self.sampling_rate_hz,
            channel_names: self.channel_names.clone(),
            n_samples: self.n_samples,
            exemplar_labels: indices.iter().map(|&i| self.exemplar_labels[i]).collect(),
            data,
        }
    }

    /// Trials `indices` as a `[n, 1, channels, samples]` tensor.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let (c, s) = (self.n_channels(), self.n_samples);
        let mut data = Vec::with_capacity(indices.len() * c * s);
        for &i in indices {
            data.extend(self.trial(i).iter().map(|&v| T::from_f32(v).unwrap_or_else(T::nan)));
        }
        Tensor::new(&[indices.len(), 1, c, s], data).expect("batch extent")
    }

    /// Per-channel mean and population standard deviation over all trials and samples.
    pub fn channel_stats(&self) -> Vec<ChannelStats> {
        let (nc, ns) = (self.n_channels(), self.n_samples);
        let count = (self.n_trials() * ns) as f64;
        (0..nc)
            .map(|c| {
                let values = || {
                    (0..self.n_trials()).flat_map(move |t| {
                        self.data[(t * nc + c) * ns..(t * nc + c + 1) * ns].iter().map(|&v| f64::from(v))
                    })
                };
                let mean = values().sum::<f64>() / count;
                let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
                ChannelStats { mean, std: var.sqrt() }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// `E1`..`En` electrode names.
pub fn default_channel_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("E{i}")).collect()
}
