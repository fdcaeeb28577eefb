//! IIR design by analog prototype, frequency prewarping and bilinear transform.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;

/// Passband ripple used when none is configured.
pub const DEFAULT_RIPPLE_DB: f64 = 1.0;

/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    /// `[a1, a2]`; `a0` is fixed at 1.
    pub a: [f64; 2],
}

impl Biquad {
    /// Complex response at `z^-1 = e^{-jw}`.
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + self.b[1] * z1 + self.b[2] * z2;
        let den = 1.0 + self.a[0] * z1 + self.a[1] * z2;
        num / den
    }

    /// Largest pole magnitude (roots of `z^2 + a1 z + a2`).
    pub fn pole_radius(&self) -> f64 {
        let [a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        let r1 = ((-a1 + disc) / 2.0).norm();
        let r2 = ((-a1 - disc) / 2.0).norm();
        r1.max(r2)
    }
}

/// Ordered second-order sections with an overall gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub kind: String,
    pub order: usize,
    pub cutoff_hz: f64,
    pub fs_hz: f64,
    pub gain: f64,
    pub sections: Vec<Biquad>,
}

impl BiquadCascade {
    /// Complex response at frequency `f_hz`.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let w = 2.0 * PI * f_hz / self.fs_hz;
        self.sections
            .iter()
            .fold(Complex64::new(self.gain, 0.0), |acc, s| acc * s.response(w))
    }

    pub fn magnitude(&self, f_hz: f64) -> f64 {
        self.response(f_hz).norm()
    }

    /// Largest pole magnitude over all sections.
    pub fn max_pole_radius(&self) -> f64 {
        self.sections.iter().map(Biquad::pole_radius).fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_radius() < 1.0
    }
}

fn check_band(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<(), DspError> {
    if order == 0 {
        return Err(DspError::Design("order must be >= 1".into()));
    }
    if !(fs_hz.is_finite() && fs_hz > 0.0) {
        return Err(DspError::Design(format!("sampling rate {fs_hz} Hz")));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
        return Err(DspError::Design(format!(
            "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
            fs_hz / 2.0
        )));
    }
    Ok(())
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    (2.0 * fs + s) / (2.0 * fs - s)
}

fn prewarp(cutoff_hz: f64, fs_hz: f64) -> f64 {
    2.0 * fs_hz * (PI * cutoff_hz / fs_hz).tan()
}

fn finish(
    kind: &str,
    order: usize,
    cutoff_hz: f64,
    fs_hz: f64,
    gain: f64,
    sections: Vec<Biquad>,
) -> Result<BiquadCascade, DspError> {
    let cascade = BiquadCascade {
        kind: kind.to_string(),
        order,
        cutoff_hz,
        fs_hz,
        gain,
        sections,
    };
    let r = cascade.max_pole_radius();
    if !(r < 1.0) {
        return Err(DspError::Unstable(r));
    }
    Ok(cascade)
}

/// Butterworth high-pass; each section has unit gain at Nyquist.
pub fn design_butterworth_highpass(
    order: usize,
    cutoff_hz: f64,
    fs_hz: f64,
) -> Result<BiquadCascade, DspError> {
    check_band(order, cutoff_hz, fs_hz)?;
    let wc = prewarp(cutoff_hz, fs_hz);
    let n = order as f64;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 0..order / 2 {
        // Unit-circle prototype pole in the upper left quadrant; the low-pass
        // to high-pass map sends it to wc / p.
        let p = Complex64::from_polar(1.0, PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n));
        let z = bilinear(wc / p, fs_hz);
        let (a1, a2) = (-2.0 * z.re, z.norm_sqr());
        let g = (1.0 - a1 + a2) / 4.0;
        sections.push(Biquad {
            b: [g, -2.0 * g, g],
            a: [a1, a2],
        });
    }
    if order % 2 == 1 {
        let z = bilinear(Complex64::new(-wc, 0.0), fs_hz).re;
        let g = (1.0 + z) / 2.0;
        sections.push(Biquad {
            b: [g, -g, 0.0],
            a: [-z, 0.0],
        });
    }
    finish("butterworth_highpass", order, cutoff_hz, fs_hz, 1.0, sections)
}

/// Chebyshev type I low-pass with passband edge `cutoff_hz` and `ripple_db` of ripple.
///
/// Sections are normalized to unit DC gain; the overall gain then places
/// DC at `10^(-rp/20)` for even orders and at 1 for odd orders.
pub fn design_chebyshev1_lowpass(
    order: usize,
    cutoff_hz: f64,
    ripple_db: f64,
    fs_hz: f64,
) -> Result<BiquadCascade, DspError> {
    check_band(order, cutoff_hz, fs_hz)?;
    if !(ripple_db > 0.0 && ripple_db.is_finite()) {
        return Err(DspError::Design(format!("ripple {ripple_db} dB must be > 0")));
    }
    let wc = prewarp(cutoff_hz, fs_hz);
    let n = order as f64;
    let eps = (10f64.powf(ripple_db / 10.0) - 1.0).sqrt();
    let mu = (1.0 / eps).asinh() / n;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 1..=order / 2 {
        let theta = PI * (2.0 * k as f64 - 1.0) / (2.0 * n);
        let p = Complex64::new(-mu.sinh() * theta.sin(), mu.cosh() * theta.cos()) * wc;
        let z = bilinear(p, fs_hz);
        let (a1, a2) = (-2.0 * z.re, z.norm_sqr());
        let g = (1.0 + a1 + a2) / 4.0;
        sections.push(Biquad {
            b: [g, 2.0 * g, g],
            a: [a1, a2],
        });
    }
    if order % 2 == 1 {
        let z = bilinear(Complex64::new(-mu.sinh() * wc, 0.0), fs_hz).re;
        let g = (1.0 - z) / 2.0;
        sections.push(Biquad {
            b: [g, g, 0.0],
            a: [-z, 0.0],
        });
    }
    let gain = if order % 2 == 0 {
        10f64.powf(-ripple_db / 20.0)
    } else {
        1.0
    };
    finish("chebyshev1_lowpass", order, cutoff_hz, fs_hz, gain, sections)
}
