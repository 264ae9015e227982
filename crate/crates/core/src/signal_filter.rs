//! Linear-phase FIR band-pass design (Hamming-windowed sinc) and zero-phase
//! forward-backward application.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid band: need 0 < {f_low} < {f_high} < fs/2 = {nyquist}")]
    InvalidBand { f_low: f64, f_high: f64, nyquist: f64 },
    #[error("filter order must be even and positive, got {0}")]
    InvalidOrder(usize),
    #[error("signal of {signal} samples is not longer than the {taps}-tap filter")]
    SignalTooShort { signal: usize, taps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirSpec {
    pub f_low: f64,
    pub f_high: f64,
    /// Number of taps minus one.
    pub order: usize,
    pub fs: f64,
}

impl FirSpec {
    pub const DEFAULT_BAND: (f64, f64) = (8.0, 12.0);
    pub const DEFAULT_ORDER: usize = 100;

    pub fn new(f_low: f64, f_high: f64, order: usize, fs: f64) -> Result<Self, FilterError> {
        let spec = Self {
            f_low,
            f_high,
            order,
            fs,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 8–12 Hz, order 100.
    pub fn qrs_band(fs: f64) -> Self {
        Self {
            f_low: Self::DEFAULT_BAND.0,
            f_high: Self::DEFAULT_BAND.1,
            order: Self::DEFAULT_ORDER,
            fs,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let nyquist = self.fs / 2.0;
        let ok = self.f_low > 0.0 && self.f_low < self.f_high && self.f_high < nyquist;
        if !ok || !self.f_low.is_finite() || !self.f_high.is_finite() {
            return Err(FilterError::InvalidBand {
                f_low: self.f_low,
                f_high: self.f_high,
                nyquist,
            });
        }
        if self.order == 0 || !self.order.is_multiple_of(2) {
            return Err(FilterError::InvalidOrder(self.order));
        }
        Ok(())
    }
}

fn hamming(n: usize, order: usize) -> f64 {
    0.54 - 0.46 * (2.0 * PI * n as f64 / order as f64).cos()
}

/// Symmetric band-pass taps with exactly zero DC gain and unit gain at the
/// geometric centre of the band.
pub fn design_bandpass(spec: &FirSpec) -> Result<Vec<f64>, FilterError> {
    spec.validate()?;
    let m = spec.order;
    let half = m as f64 / 2.0;
    let lo = spec.f_low / spec.fs;
    let hi = spec.f_high / spec.fs;
    let window: Vec<f64> = (0..=m).map(|n| hamming(n, m)).collect();
    let mut taps: Vec<f64> = (0..=m)
        .map(|n| {
            let t = n as f64 - half;
            let ideal = if t == 0.0 {
                2.0 * (hi - lo)
            } else {
                ((2.0 * PI * hi * t).sin() - (2.0 * PI * lo * t).sin()) / (PI * t)
            };
            ideal * window[n]
        })
        .collect();

    // Remove the residual DC leakage with a window-shaped correction.
    let dc: f64 = taps.iter().sum();
    let wsum: f64 = window.iter().sum();
    for (h, w) in taps.iter_mut().zip(&window) {
        *h -= dc * w / wsum;
    }
    for k in 0..m / 2 {
        let avg = 0.5 * (taps[k] + taps[m - k]);
        taps[k] = avg;
        taps[m - k] = avg;
    }

    let centre = (spec.f_low * spec.f_high).sqrt();
    let gain = magnitude_response(&taps, centre, spec.fs);
    for h in &mut taps {
        *h /= gain;
    }
    Ok(taps)
}

/// |H(f)| of a tap vector, via direct evaluation of the DTFT.
pub fn magnitude_response(taps: &[f64], freq: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * freq / fs;
    let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, h)| {
        let phase = w * k as f64;
        (re + h * phase.cos(), im - h * phase.sin())
    });
    re.hypot(im)
}

fn convolve_causal(x: &[f64], taps: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let kmax = n.min(taps.len() - 1);
            (0..=kmax).map(|k| taps[k] * x[n - k]).sum()
        })
        .collect()
}

/// Forward-backward filtering with point-reflected padding of one filter length
/// at each edge; output is aligned sample-for-sample with the input.
pub fn filter_zero_phase(signal: &[f64], taps: &[f64]) -> Result<Vec<f64>, FilterError> {
    let pad = taps.len();
    if taps.is_empty() || signal.len() <= pad {
        return Err(FilterError::SignalTooShort {
            signal: signal.len(),
            taps: taps.len(),
        });
    }
    let n = signal.len();
    let first = signal[0];
    let last = signal[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| 2.0 * first - signal[k]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|k| 2.0 * last - signal[n - 1 - k]));

    let mut y = convolve_causal(&ext, taps);
    y.reverse();
    let mut y = convolve_causal(&y, taps);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}
