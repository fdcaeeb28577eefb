//! Channel masks for the attention branch.
//!
//! A mask keeps the listed channels and zeroes every other one, so the
//! masked input keeps its full `[.., channels, samples]` shape.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::N_CHANNELS;
use crate::tensor::{Scalar, Tensor};

const DEFAULT_MASK_JSON: &str = include_str!("../../assets/occipital_mask.json");

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask '{0}' retains no channels")]
    Empty(String),
    #[error("mask '{name}' lists channel {index} twice")]
    Duplicate { name: String, index: usize },
    #[error("mask '{name}': channel {index} outside 0..{n_channels}")]
    OutOfRange {
        name: String,
        index: usize,
        n_channels: usize,
    },
    #[error("mask input of shape {0:?} has no channel axis")]
    Shape(Vec<usize>),
    #[error("mask file: {0}")]
    Io(#[from] std::io::Error),
    #[error("mask file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Named set of retained channel indices (zero-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub name: String,
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl MaskSpec {
    pub fn new(name: impl Into<String>, indices: Vec<usize>) -> Self {
        MaskSpec {
            name: name.into(),
            indices,
            description: None,
        }
    }

    /// Every channel of an `n_channels` montage.
    pub fn all(n_channels: usize) -> Self {
        MaskSpec::new("all", (0..n_channels).collect())
    }

    pub fn validate(&self, n_channels: usize) -> Result<(), MaskError> {
        if self.indices.is_empty() {
            return Err(MaskError::Empty(self.name.clone()));
        }
        let mut seen = HashSet::new();
        for &index in &self.indices {
            if index >= n_channels {
                return Err(MaskError::OutOfRange {
                    name: self.name.clone(),
                    index,
                    n_channels,
                });
            }
            if !seen.insert(index) {
                return Err(MaskError::Duplicate {
                    name: self.name.clone(),
                    index,
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, MaskError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Load a `{name, indices}` file and validate it against `n_channels`.
    pub fn load(path: impl AsRef<Path>, n_channels: usize) -> Result<Self, MaskError> {
        let m = Self::from_json(&std::fs::read_to_string(path)?)?;
        m.validate(n_channels)?;
        Ok(m)
    }

    /// Per-channel keep flags.
    pub fn keep(&self, n_channels: usize) -> Vec<bool> {
        let mut keep = vec![false; n_channels];
        for &i in &self.indices {
            if i < n_channels {
                keep[i] = true;
            }
        }
        keep
    }
}

/// The shipped occipital electrode set for the 124-channel montage.
pub fn default_occipital_mask() -> MaskSpec {
    let m = MaskSpec::from_json(DEFAULT_MASK_JSON).expect("bundled mask parses");
    debug_assert!(m.validate(N_CHANNELS).is_ok());
    m
}

/// Zero every channel not in `mask`; the channel axis is the second to last.
pub fn apply_mask<T: Scalar>(x: &Tensor<T>, mask: &MaskSpec) -> Result<Tensor<T>, MaskError> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(MaskError::Shape(shape.to_vec()));
    }
    let (nc, ns) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    mask.validate(nc)?;
    let keep = mask.keep(nc);
    let mut out = x.clone();
    if ns > 0 {
        for (row, ch) in out.data_mut().chunks_exact_mut(ns).zip((0..nc).cycle()) {
            if !keep[ch] {
                row.fill(T::zero());
            }
        }
    }
    Ok(out)
}
