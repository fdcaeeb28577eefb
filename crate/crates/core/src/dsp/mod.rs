//! Signal conditioning for continuous EEG recordings.
//!
//! The chain turns a 1000 Hz multichannel recording into model-ready
//! epochs: Butterworth high-pass, Chebyshev type I low-pass, integer
//! decimation and marker-locked epoching. Filters are designed as cascades
//! of second-order sections via the bilinear transform with prewarping and
//! run in direct form II transposed at `f64`.

mod design;
mod filter;
mod recording;

use thiserror::Error;

pub use design::{
    design_butterworth_highpass, design_chebyshev1_lowpass, Biquad, BiquadCascade,
    DEFAULT_RIPPLE_DB,
};
pub use filter::{filter_apply, filter_signal, FilterMode};
pub use recording::{
    decimate, epoch, preprocess, read_recording, write_recording, ContinuousRecording,
    EpochResult, Marker, PreprocessParams, PreprocessResult, RECORDING_MAGIC, RECORDING_VERSION,
};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("filter design: {0}")]
    Design(String),
    #[error("designed filter is unstable (pole radius {0})")]
    Unstable(f64),
    #[error("decimation factor must be >= 1, got {0}")]
    Factor(usize),
    #[error("invalid recording: {0}")]
    Recording(String),
    #[error("recording container: {0}")]
    Container(#[from] crate::datamodel::FormatError),
}
