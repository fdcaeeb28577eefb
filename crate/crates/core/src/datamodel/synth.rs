//! Synthetic evoked responses standing in for real recordings.
//!
//! Each category owns a Gaussian temporal bump on a small set of focus
//! channels. The 12 exemplars of a category shift that bump in time and
//! scale it on a fixed grid, so exemplars are separable too but only by
//! finer detail than categories. White noise is added per sample.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{default_channel_names, default_occipital_mask, EegDataset, FormatError, N_CATEGORIES, N_EXEMPLARS};
use super::{EXEMPLARS_PER_CATEGORY, N_CHANNELS, N_SAMPLES};
use crate::dsp::{ContinuousRecording, Marker};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTemplate {
    /// Bump onset in samples; the peak sits at `latency + duration / 2`.
    pub latency: f64,
    pub duration: f64,
    pub focus_channels: Vec<usize>,
    pub amplitude: f64,
}

/// Noise override for channels outside `indices`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffMaskNoise {
    pub indices: Vec<usize>,
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subject_id: String,
    pub seed: u64,
    pub n_trials_per_exemplar: usize,
    /// Peak template amplitude over noise standard deviation.
    pub snr: f64,
    pub n_channels: usize,
    pub n_samples: usize,
    pub sampling_rate_hz: f64,
    /// Scale of the exemplar grid: latency shifts of `jitter * (k % 4 - 1.5)`
    /// samples and gains of `1 + 0.25 * jitter * (k / 4 - 1)`.
    pub jitter: f64,
    pub templates: Vec<CategoryTemplate>,
    pub off_mask: Option<OffMaskNoise>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subject_id: "synth".into(),
            seed: 0,
            n_trials_per_exemplar: 72,
            snr: 10.0,
            n_channels: N_CHANNELS,
            n_samples: N_SAMPLES,
            sampling_rate_hz: 62.5,
            jitter: 1.0,
            templates: default_templates(),
            off_mask: None,
        }
    }
}

/// Six categories with staggered latencies, each on three channels of the
/// default occipital mask.
pub fn default_templates() -> Vec<CategoryTemplate> {
    let mask = default_occipital_mask();
    mask.indices
        .chunks(3)
        .take(N_CATEGORIES)
        .enumerate()
        .map(|(c, focus)| CategoryTemplate {
            latency: 4.0 + 3.0 * c as f64,
            duration: 8.0,
            focus_channels: focus.to_vec(),
            amplitude: 1.0,
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), FormatError> {
        let bad = |m: String| Err(FormatError::Invalid(m));
        if self.n_trials_per_exemplar == 0 || self.n_channels == 0 || self.n_samples == 0 {
            return bad("trials per exemplar, channels and samples must all be >= 1".into());
        }
        if !(self.sampling_rate_hz > 0.0) {
            return bad(format!("sampling rate {} must be > 0", self.sampling_rate_hz));
        }
        if !(self.snr > 0.0) {
            return bad(format!("snr {} must be > 0", self.snr));
        }
        if self.templates.len() != N_CATEGORIES {
            return bad(format!("{} templates, expected {N_CATEGORIES}", self.templates.len()));
        }
        for (c, t) in self.templates.iter().enumerate() {
            if !(t.latency >= 0.0 && t.duration > 0.0 && t.latency + t.duration <= self.n_samples as f64) {
                return bad(format!("template {c}: latency + duration exceeds {} samples", self.n_samples));
            }
            if t.focus_channels.is_empty() || t.focus_channels.iter().any(|&ch| ch >= self.n_channels) {
                return bad(format!("template {c}: focus channels outside 0..{}", self.n_channels));
            }
        }
        if let Some(o) = &self.off_mask {
            if !(o.snr > 0.0) || o.indices.iter().any(|&ch| ch >= self.n_channels) {
                return bad("off-mask noise needs snr > 0 and in-range indices".into());
            }
        }
        Ok(())
    }

    fn noise_std(&self) -> Vec<f64> {
        let peak = self.templates.iter().map(|t| t.amplitude.abs()).fold(0.0, f64::max);
        let mut std = vec![peak / self.snr; self.n_channels];
        if let Some(o) = &self.off_mask {
            let keep = super::MaskSpec::new("off", o.indices.clone()).keep(self.n_channels);
            for (s, k) in std.iter_mut().zip(keep) {
                if !k {
                    *s = peak / o.snr;
                }
            }
        }
        std
    }

    /// Noise-free response of `exemplar` at fractional sample time `t`,
    /// or `None` for channels outside the category's focus set.
    fn evoked(&self, exemplar: usize, channel: usize, t: f64) -> Option<f64> {
        let tpl = &self.templates[exemplar / EXEMPLARS_PER_CATEGORY];
        if !tpl.focus_channels.contains(&channel) {
            return None;
        }
        let k = exemplar % EXEMPLARS_PER_CATEGORY;
        let center = tpl.latency + tpl.duration / 2.0 + self.jitter * ((k % 4) as f64 - 1.5);
        let gain = 1.0 + 0.25 * self.jitter * ((k / 4) as f64 - 1.0);
        let sigma = tpl.duration / 4.0;
        Some(tpl.amplitude * gain * (-(t - center).powi(2) / (2.0 * sigma * sigma)).exp())
    }
}

/// `n_trials_per_exemplar` repetitions of all 72 exemplars, repetition-major.
pub fn synth_generate(cfg: &SynthConfig) -> Result<EegDataset, FormatError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = cfg.noise_std();
    let (nc, ns) = (cfg.n_channels, cfg.n_samples);
    let n_trials = cfg.n_trials_per_exemplar * N_EXEMPLARS;
    let mut data = Vec::with_capacity(n_trials * nc * ns);
    let mut labels = Vec::with_capacity(n_trials);
    for _ in 0..cfg.n_trials_per_exemplar {
        for e in 0..N_EXEMPLARS {
            labels.push(e as u16);
            for (c, &sd) in noise.iter().enumerate() {
                for t in 0..ns {
                    let signal = cfg.evoked(e, c, t as f64).unwrap_or(0.0);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push((signal + sd * z) as f32);
                }
            }
        }
    }
    EegDataset::new(
        cfg.subject_id.clone(),
        cfg.sampling_rate_hz,
        default_channel_names(nc),
        ns,
        labels,
        data,
    )
}

/// A continuous recording whose decimated, epoched form carries the
/// templates of `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuousSynthConfig {
    pub base: SynthConfig,
    pub sampling_rate_hz: f64,
    /// Ratio of the continuous rate to `base.sampling_rate_hz`.
    pub decimation: usize,
    pub n_markers: usize,
    pub lead_in: usize,
    pub interval: usize,
    /// Slow 0.1 Hz drift and constant offset for the high-pass to remove.
    pub drift_amplitude: f64,
    pub dc_offset: f64,
}

impl Default for ContinuousSynthConfig {
    fn default() -> Self {
        ContinuousSynthConfig {
            base: SynthConfig::default(),
            sampling_rate_hz: 1000.0,
            decimation: 16,
            n_markers: 72,
            lead_in: 2000,
            interval: 1000,
            drift_amplitude: 2.0,
            dc_offset: 5.0,
        }
    }
}

/// Markers cycle through the exemplars in order.
pub fn synth_continuous(cfg: &ContinuousSynthConfig) -> Result<ContinuousRecording, FormatError> {
    let base = &cfg.base;
    base.validate()?;
    if cfg.decimation == 0 || cfg.interval == 0 {
        return Err(FormatError::Invalid("decimation and interval must be >= 1".into()));
    }
    let tail = base.n_samples * cfg.decimation + cfg.interval;
    let n_samples = cfg.lead_in + cfg.n_markers * cfg.interval + tail;
    let markers: Vec<Marker> = (0..cfg.n_markers)
        .map(|i| Marker {
            sample: cfg.lead_in + i * cfg.interval,
            exemplar: (i % N_EXEMPLARS) as u16,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let noise = base.noise_std();
    let d = cfg.decimation as f64;
    let mut data = Vec::with_capacity(base.n_channels * n_samples);
    for (c, &sd) in noise.iter().enumerate() {
        let start = data.len();
        for t in 0..n_samples {
            let drift = cfg.drift_amplitude * (2.0 * PI * 0.1 * t as f64 / cfg.sampling_rate_hz).sin();
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(cfg.dc_offset + drift + sd * z);
        }
        let ch = &mut data[start..];
        for m in &markers {
            let span = base.n_samples * cfg.decimation;
            for (dt, v) in ch[m.sample..m.sample + span].iter_mut().enumerate() {
                if let Some(s) = base.evoked(usize::from(m.exemplar), c, dt as f64 / d) {
                    *v += s;
                } else {
                    break;
                }
            }
        }
    }
    ContinuousRecording::new(
        base.subject_id.clone(),
        cfg.sampling_rate_hz,
        default_channel_names(base.n_channels),
        n_samples,
        data,
        markers,
    )
    .map_err(|e| FormatError::Invalid(e.to_string()))
}
