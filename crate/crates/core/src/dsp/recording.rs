//! Continuous recordings, their raw container, decimation and epoching.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    design_butterworth_highpass, design_chebyshev1_lowpass, filter_apply, BiquadCascade, DspError,
    FilterMode, DEFAULT_RIPPLE_DB,
};
use crate::datamodel::container::{read_f32s, read_preamble, read_u16, read_u64, write_preamble};
use crate::datamodel::{EegDataset, FormatError, N_EXEMPLARS};

pub const RECORDING_MAGIC: &[u8; 4] = b"EEGR";
pub const RECORDING_VERSION: u16 = 1;

/// Stimulus onset at `sample` showing exemplar `exemplar`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub sample: usize,
    pub exemplar: u16,
}

/// Multichannel signal stored `[channel][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRecording {
    pub subject_id: String,
    pub sampling_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub n_samples: usize,
    pub data: Vec<f64>,
    pub markers: Vec<Marker>,
}

impl ContinuousRecording {
    pub fn new(
        subject_id: impl Into<String>,
        sampling_rate_hz: f64,
        channel_names: Vec<String>,
        n_samples: usize,
        data: Vec<f64>,
        markers: Vec<Marker>,
    ) -> Result<Self, DspError> {
        let rec = ContinuousRecording {
            subject_id: subject_id.into(),
            sampling_rate_hz,
            channel_names,
            n_samples,
            data,
            markers,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |m: String| Err(DspError::Recording(m));
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return bad(format!("sampling rate {}", self.sampling_rate_hz));
        }
        if self.data.len() != self.n_channels() * self.n_samples {
            return bad(format!(
                "{} values for {} channels x {} samples",
                self.data.len(),
                self.n_channels(),
                self.n_samples
            ));
        }
        for (i, m) in self.markers.iter().enumerate() {
            if m.sample >= self.n_samples {
                return bad(format!("marker {i} at sample {} beyond {}", m.sample, self.n_samples));
            }
            if usize::from(m.exemplar) >= N_EXEMPLARS {
                return bad(format!("marker {i} exemplar {} out of range", m.exemplar));
            }
            if i > 0 && self.markers[i - 1].sample >= m.sample {
                return bad(format!("markers not strictly increasing at {i}"));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RecordingHeader {
    subject_id: String,
    n_channels: usize,
    n_samples: usize,
    sampling_rate_hz: f64,
    channel_names: Vec<String>,
    n_markers: usize,
}

/// Raw container: magic `EEGR`, `u16` version, `u32` header length, JSON
/// header, `f32` samples `[channel][sample]`, then `(u64 sample, u16 exemplar)` markers.
pub fn write_recording<W: Write>(mut w: W, rec: &ContinuousRecording) -> Result<(), DspError> {
    rec.validate()?;
    let header = RecordingHeader {
        subject_id: rec.subject_id.clone(),
        n_channels: rec.n_channels(),
        n_samples: rec.n_samples,
        sampling_rate_hz: rec.sampling_rate_hz,
        channel_names: rec.channel_names.clone(),
        n_markers: rec.markers.len(),
    };
    let json = serde_json::to_vec(&header).map_err(FormatError::Header)?;
    write_preamble(&mut w, RECORDING_MAGIC, RECORDING_VERSION, &json)?;
    let mut buf = Vec::with_capacity(rec.data.len() * 4 + rec.markers.len() * 10);
    for &v in &rec.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for m in &rec.markers {
        buf.extend_from_slice(&(m.sample as u64).to_le_bytes());
        buf.extend_from_slice(&m.exemplar.to_le_bytes());
    }
    w.write_all(&buf).map_err(FormatError::Io)?;
    w.flush().map_err(FormatError::Io)?;
    Ok(())
}

pub fn read_recording<R: Read>(mut r: R) -> Result<ContinuousRecording, DspError> {
    let json = read_preamble(&mut r, RECORDING_MAGIC, RECORDING_VERSION)?;
    let h: RecordingHeader = serde_json::from_slice(&json).map_err(FormatError::Header)?;
    if h.channel_names.len() != h.n_channels {
        return Err(FormatError::Invalid(format!(
            "{} channel names for {} channels",
            h.channel_names.len(),
            h.n_channels
        ))
        .into());
    }
    let data = read_f32s(&mut r, h.n_channels * h.n_samples, "samples")?
        .into_iter()
        .map(f64::from)
        .collect();
    let mut markers = Vec::with_capacity(h.n_markers);
    for _ in 0..h.n_markers {
        let sample = read_u64(&mut r, "markers")? as usize;
        let exemplar = read_u16(&mut r, "markers")?;
        markers.push(Marker { sample, exemplar });
    }
    ContinuousRecording::new(h.subject_id, h.sampling_rate_hz, h.channel_names, h.n_samples, data, markers)
}

/// Keep every `factor`-th sample from index 0; marker positions are floor-divided.
pub fn decimate(rec: &ContinuousRecording, factor: usize) -> Result<ContinuousRecording, DspError> {
    if factor < 1 {
        return Err(DspError::Factor(factor));
    }
    let n_out = rec.n_samples.div_ceil(factor);
    let mut data = Vec::with_capacity(rec.n_channels() * n_out);
    for c in 0..rec.n_channels() {
        data.extend(rec.channel(c).iter().step_by(factor));
    }
    let markers: Vec<Marker> = rec
        .markers
        .iter()
        .map(|m| Marker {
            sample: m.sample / factor,
            exemplar: m.exemplar,
        })
        .collect();
    if let Some(w) = markers.windows(2).position(|w| w[0].sample >= w[1].sample) {
        return Err(DspError::Recording(format!(
            "markers {w} and {} collide after decimation by {factor}",
            w + 1
        )));
    }
    ContinuousRecording::new(
        rec.subject_id.clone(),
        rec.sampling_rate_hz / factor as f64,
        rec.channel_names.clone(),
        n_out,
        data,
        markers,
    )
}

#[derive(Debug, Clone)]
pub struct EpochResult {
    pub dataset: EegDataset,
    /// Markers too close to the end of the recording to fill a window.
    pub dropped: usize,
}

/// One `window`-sample trial per marker, starting at the marker sample.
pub fn epoch(rec: &ContinuousRecording, window: usize) -> Result<EpochResult, DspError> {
    if window == 0 {
        return Err(DspError::Recording("epoch window must be >= 1".into()));
    }
    let nc = rec.n_channels();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut dropped = 0;
    for m in &rec.markers {
        if m.sample + window > rec.n_samples {
            dropped += 1;
            continue;
        }
        for c in 0..nc {
            data.extend(rec.channel(c)[m.sample..m.sample + window].iter().map(|&v| v as f32));
        }
        labels.push(m.exemplar);
    }
    if dropped > 0 {
        log::warn!("epoch: dropped {dropped} marker(s) within {window} samples of the end");
    }
    let dataset = EegDataset::new(
        rec.subject_id.clone(),
        rec.sampling_rate_hz,
        rec.channel_names.clone(),
        window,
        labels,
        data,
    )?;
    Ok(EpochResult { dataset, dropped })
}

/// Parameters of the high-pass, low-pass, decimate, epoch chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessParams {
    pub highpass_order: usize,
    pub highpass_hz: f64,
    pub lowpass_order: usize,
    pub lowpass_hz: f64,
    pub ripple_db: f64,
    pub decimation: usize,
    pub window: usize,
    pub mode: FilterMode,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            highpass_order: 4,
            highpass_hz: 1.0,
            lowpass_order: 8,
            lowpass_hz: 25.0,
            ripple_db: DEFAULT_RIPPLE_DB,
            decimation: 16,
            window: 32,
            mode: FilterMode::Causal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreprocessResult {
    pub dataset: EegDataset,
    pub dropped: usize,
    pub highpass: BiquadCascade,
    pub lowpass: BiquadCascade,
}

pub fn preprocess(rec: &ContinuousRecording, p: &PreprocessParams) -> Result<PreprocessResult, DspError> {
    if rec.markers.is_empty() {
        return Err(DspError::Recording("no event markers".into()));
    }
    if p.decimation < 1 {
        return Err(DspError::Factor(p.decimation));
    }
    let fs = rec.sampling_rate_hz;
    let out_nyquist = fs / p.decimation as f64 / 2.0;
    if p.lowpass_hz >= out_nyquist {
        return Err(DspError::Design(format!(
            "low-pass edge {} Hz does not protect the decimated Nyquist of {out_nyquist} Hz",
            p.lowpass_hz
        )));
    }
    let highpass = design_butterworth_highpass(p.highpass_order, p.highpass_hz, fs)?;
    let lowpass = design_chebyshev1_lowpass(p.lowpass_order, p.lowpass_hz, p.ripple_db, fs)?;
    log::info!("high-pass sections: {:?} gain {}", highpass.sections, highpass.gain);
    log::info!("low-pass sections: {:?} gain {}", lowpass.sections, lowpass.gain);
    let filtered = filter_apply(&filter_apply(rec, &highpass, p.mode), &lowpass, p.mode);
    let dec = decimate(&filtered, p.decimation)?;
    let EpochResult { dataset, dropped } = epoch(&dec, p.window)?;
    Ok(PreprocessResult {
        dataset,
        dropped,
        highpass,
        lowpass,
    })
}
