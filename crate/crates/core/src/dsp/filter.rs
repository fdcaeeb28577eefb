//! Direct form II transposed filtering.

use serde::{Deserialize, Serialize};

use super::{BiquadCascade, ContinuousRecording};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Single forward pass from zero initial state.
    #[default]
    Causal,
    /// Forward pass followed by a time-reversed pass (no edge padding).
    ZeroPhase,
}

fn forward_pass(f: &BiquadCascade, x: &mut [f64]) {
    if f.gain != 1.0 {
        for v in x.iter_mut() {
            *v *= f.gain;
        }
    }
    for s in &f.sections {
        let [b0, b1, b2] = s.b;
        let [a1, a2] = s.a;
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + s1;
            s1 = b1 * input - a1 * y + s2;
            s2 = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Filter one channel in place.
pub fn filter_signal(f: &BiquadCascade, x: &mut [f64], mode: FilterMode) {
    forward_pass(f, x);
    if mode == FilterMode::ZeroPhase {
        x.reverse();
        forward_pass(f, x);
        x.reverse();
    }
}

/// Filter every channel; markers and metadata are carried over unchanged.
pub fn filter_apply(rec: &ContinuousRecording, f: &BiquadCascade, mode: FilterMode) -> ContinuousRecording {
    let mut out = rec.clone();
    if out.n_samples > 0 {
        for ch in out.data.chunks_exact_mut(out.n_samples) {
            filter_signal(f, ch, mode);
        }
    }
    out
}
