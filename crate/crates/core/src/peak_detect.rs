//! R-peak detection (Hamilton-style adaptive threshold on a derivative envelope),
//! RR-series correction with a local median, S-peak search and the beat-matching
//! evaluation protocol.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics_eval::ConfusionCounts;

#[derive(Debug, Error, PartialEq)]
pub enum PeakError {
    #[error("signal of {samples} samples is shorter than the {min_samples} needed to initialise thresholds")]
    SignalTooShort { samples: usize, min_samples: usize },
    #[error("sampling rate must be positive")]
    InvalidRate,
    #[error("R indices must be strictly increasing (violated at position {0})")]
    NotIncreasing(usize),
    #[error("invalid RR bounds: {0}")]
    InvalidBounds(String),
}

/// Paired beat fiducials. Entry `k` of every vector describes the same beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSeries {
    pub fs: u32,
    pub r_idx: Vec<usize>,
    pub r_amp: Vec<f64>,
    pub s_idx: Vec<usize>,
    pub s_amp: Vec<f64>,
}

impl BeatSeries {
    pub fn empty(fs: u32) -> Self {
        Self {
            fs,
            r_idx: Vec::new(),
            r_amp: Vec::new(),
            s_idx: Vec::new(),
            s_amp: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.r_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_idx.is_empty()
    }

    /// Checks aligned lengths, strict ordering of both index series and that
    /// every S sits at or after its R.
    pub fn is_consistent(&self) -> bool {
        let n = self.r_idx.len();
        n == self.r_amp.len()
            && n == self.s_idx.len()
            && n == self.s_amp.len()
            && self.r_idx.windows(2).all(|w| w[0] < w[1])
            && self.s_idx.windows(2).all(|w| w[0] < w[1])
            && self.r_idx.iter().zip(&self.s_idx).all(|(r, s)| r <= s)
    }

    pub fn rr_intervals_s(&self) -> Vec<f64> {
        self.r_idx
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64 / self.fs as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrBounds {
    pub rr_min: f64,
    pub rr_max: f64,
    /// Odd beat-interval count of the local median window.
    pub window: usize,
}

impl Default for RrBounds {
    fn default() -> Self {
        Self {
            rr_min: 0.3,
            rr_max: 2.0,
            window: 5,
        }
    }
}

impl RrBounds {
    pub fn new(rr_min: f64, rr_max: f64, window: usize) -> Result<Self, PeakError> {
        let b = Self {
            rr_min,
            rr_max,
            window,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), PeakError> {
        if !(self.rr_min > 0.0 && self.rr_min < self.rr_max && self.rr_max.is_finite()) {
            return Err(PeakError::InvalidBounds(format!(
                "need 0 < rr_min ({}) < rr_max ({})",
                self.rr_min, self.rr_max
            )));
        }
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(PeakError::InvalidBounds(format!(
                "median window must be odd and >= 3, got {}",
                self.window
            )));
        }
        Ok(())
    }

    fn contains(&self, samples: usize, fs: f64) -> bool {
        let s = samples as f64 / fs;
        s >= self.rr_min && s <= self.rr_max
    }
}

/// Tunables of the QRS detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HamiltonConfig {
    /// Width of the moving-average envelope.
    pub ma_window_s: f64,
    pub refractory_s: f64,
    /// Detection threshold as a fraction of the way from the noise to the QRS estimate.
    pub threshold_fraction: f64,
    /// Search back at half threshold once this many median RRs pass without a beat.
    pub searchback_factor: f64,
    /// Span used to seed the QRS peak estimate.
    pub init_s: f64,
    pub min_signal_s: f64,
    /// Half-width of the envelope span whose centre of energy locates the QRS.
    pub centroid_s: f64,
    /// Half-width of the window around that centre searched for the R maximum.
    pub fiducial_search_s: f64,
    /// Number of recent peaks kept in the QRS / noise / RR buffers.
    pub history: usize,
}

impl Default for HamiltonConfig {
    fn default() -> Self {
        Self {
            ma_window_s: 0.08,
            refractory_s: 0.2,
            threshold_fraction: 0.3125,
            searchback_factor: 1.5,
            init_s: 8.0,
            min_signal_s: 2.0,
            centroid_s: 0.1,
            fiducial_search_s: 0.04,
            history: 8,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct RollingBuffer {
    values: Vec<f64>,
    cap: usize,
}

impl RollingBuffer {
    fn new(cap: usize) -> Self {
        Self {
            values: Vec::with_capacity(cap),
            cap,
        }
    }
    fn push(&mut self, v: f64) {
        if self.values.len() == self.cap {
            self.values.remove(0);
        }
        self.values.push(v);
    }
    fn median(&self) -> f64 {
        median(&self.values)
    }
}

/// Rectified central derivative smoothed by a centred moving average.
fn qrs_envelope(signal: &[f64], ma_len: usize) -> Vec<f64> {
    let n = signal.len();
    let mut deriv = vec![0.0; n];
    for i in 1..n.saturating_sub(1) {
        deriv[i] = 0.5 * (signal[i + 1] - signal[i - 1]).abs();
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for d in &deriv {
        prefix.push(prefix.last().unwrap() + d);
    }
    let half = ma_len / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Local envelope maxima that dominate every other maximum within `radius` samples.
fn dominant_maxima(env: &[f64], radius: usize) -> Vec<usize> {
    let n = env.len();
    let maxima: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| env[i] > 0.0 && env[i] > env[i - 1] && env[i] >= env[i + 1])
        .collect();
    let mut keep = Vec::new();
    let mut start = 0;
    for (k, &i) in maxima.iter().enumerate() {
        while maxima[start] + radius < i {
            start += 1;
        }
        let dominated = maxima[start..]
            .iter()
            .take_while(|&&j| j <= i + radius)
            .any(|&j| j != i && (env[j] > env[i] || (env[j] == env[i] && j < i)));
        if !dominated {
            keep.push(maxima[k]);
        }
    }
    keep
}

/// Energy-weighted centre of the envelope within `reach` samples of `peak`.
fn envelope_centroid(env: &[f64], peak: usize, reach: usize) -> usize {
    let lo = peak.saturating_sub(reach);
    let hi = (peak + reach + 1).min(env.len());
    let (mut w, mut wx) = (0.0, 0.0);
    for (i, e) in env.iter().enumerate().take(hi).skip(lo) {
        w += e * e;
        wx += e * e * i as f64;
    }
    if w > 0.0 {
        (wx / w).round() as usize
    } else {
        peak
    }
}

/// QRS fiducial indices on a band-passed signal.
pub fn detect_r_peaks(signal: &[f64], fs: u32, cfg: &HamiltonConfig) -> Result<Vec<usize>, PeakError> {
    if fs == 0 {
        return Err(PeakError::InvalidRate);
    }
    let fsf = fs as f64;
    let min_samples = (cfg.min_signal_s * fsf).ceil() as usize;
    if signal.len() < min_samples {
        return Err(PeakError::SignalTooShort {
            samples: signal.len(),
            min_samples,
        });
    }
    let ma_len = ((cfg.ma_window_s * fsf).round() as usize).max(1) | 1;
    let refractory = (cfg.refractory_s * fsf).round() as usize;
    let env = qrs_envelope(signal, ma_len);
    if env.iter().all(|&v| v <= 0.0) {
        return Ok(Vec::new());
    }
    let candidates = dominant_maxima(&env, refractory);

    let mut qrs = RollingBuffer::new(cfg.history);
    let mut noise = RollingBuffer::new(cfg.history);
    let mut rr = RollingBuffer::new(cfg.history);
    let second = fs as usize;
    let init_len = ((cfg.init_s * fsf) as usize).min(signal.len());
    for chunk in env[..init_len].chunks(second) {
        qrs.push(chunk.iter().copied().fold(0.0, f64::max));
    }
    let threshold = |qrs: &RollingBuffer, noise: &RollingBuffer| {
        let q = qrs.median();
        let n = noise.median();
        n + cfg.threshold_fraction * (q - n)
    };

    let mut accepted: Vec<usize> = Vec::new();
    let mut pending: Vec<usize> = Vec::new();
    let search_back = |now: usize,
                           accepted: &mut Vec<usize>,
                           pending: &mut Vec<usize>,
                           qrs: &mut RollingBuffer,
                           rr: &mut RollingBuffer,
                           noise: &RollingBuffer| {
        while let Some(&last) = accepted.last() {
            if rr.values.is_empty() {
                return;
            }
            let limit = cfg.searchback_factor * rr.median();
            if ((now - last) as f64) <= limit {
                return;
            }
            let half = 0.5 * threshold(qrs, noise);
            let best = pending
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > last + refractory && c + refractory < now && env[c] >= half)
                .max_by(|a, b| env[*a.1].total_cmp(&env[*b.1]).then(b.1.cmp(a.1)));
            let Some((pos, &c)) = best else { return };
            rr.push((c - last) as f64);
            qrs.push(env[c]);
            accepted.push(c);
            pending.drain(..=pos);
        }
    };

    for &c in &candidates {
        search_back(c, &mut accepted, &mut pending, &mut qrs, &mut rr, &noise);
        let clear = accepted.last().is_none_or(|&last| c > last + refractory);
        if env[c] > threshold(&qrs, &noise) && clear {
            if let Some(&last) = accepted.last() {
                rr.push((c - last) as f64);
            }
            qrs.push(env[c]);
            accepted.push(c);
            pending.clear();
        } else {
            noise.push(env[c]);
            pending.push(c);
        }
    }
    search_back(signal.len(), &mut accepted, &mut pending, &mut qrs, &mut rr, &noise);

    let radius = (cfg.fiducial_search_s * fsf).round() as usize;
    let reach = (cfg.centroid_s * fsf).round() as usize;
    let mut peaks: Vec<usize> = Vec::with_capacity(accepted.len());
    for &p in &accepted {
        let p = envelope_centroid(&env, p, reach);
        let lo = p.saturating_sub(radius);
        let hi = (p + radius + 1).min(signal.len());
        let r = (lo..hi)
            .max_by(|&a, &b| signal[a].total_cmp(&signal[b]).then(b.cmp(&a)))
            .expect("non-empty search window");
        match peaks.last() {
            Some(&prev) if r <= prev + refractory => {
                if signal[r] > signal[prev] {
                    *peaks.last_mut().unwrap() = r;
                }
            }
            _ => peaks.push(r),
        }
    }
    Ok(peaks)
}

/// Moves each peak to the maximum of `signal` within `radius` samples, keeping
/// the series strictly increasing.
pub fn refine_peaks(signal: &[f64], peaks: &[usize], radius: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(peaks.len());
    for &p in peaks {
        let lo = p.saturating_sub(radius);
        let hi = (p + radius + 1).min(signal.len());
        if lo >= hi {
            continue;
        }
        let r = (lo..hi)
            .max_by(|&a, &b| signal[a].total_cmp(&signal[b]).then(b.cmp(&a)))
            .expect("non-empty window");
        if out.last().is_none_or(|&prev| r > prev) {
            out.push(r);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrectionStatus {
    /// Every RR interval lies within the bounds.
    Corrected,
    /// Fewer than `window + 1` peaks; the input is returned unchanged.
    TooFewPeaks,
    /// Some long intervals could not be split into in-bound parts; their beats were dropped.
    Unfixable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrCorrection {
    pub r_idx: Vec<usize>,
    pub status: CorrectionStatus,
    pub merged: usize,
    pub inserted: usize,
    pub dropped: usize,
}

/// Median of the in-bound intervals in a `window`-wide neighbourhood of `i`,
/// falling back to all in-bound intervals, then to the raw neighbourhood.
fn local_median(iv: &[usize], i: usize, bounds: &RrBounds, fs: f64) -> f64 {
    let w = bounds.window.min(iv.len());
    let lo = i.saturating_sub(w / 2).min(iv.len() - w);
    let near = &iv[lo..lo + w];
    let valid: Vec<f64> = near
        .iter()
        .filter(|&&d| bounds.contains(d, fs))
        .map(|&d| d as f64)
        .collect();
    if !valid.is_empty() {
        return median(&valid);
    }
    let all: Vec<f64> = iv
        .iter()
        .filter(|&&d| bounds.contains(d, fs))
        .map(|&d| d as f64)
        .collect();
    if !all.is_empty() {
        return median(&all);
    }
    median(&near.iter().map(|&d| d as f64).collect::<Vec<_>>())
}

/// Number of equal parts (>= 2) for a long interval whose pieces all land in bounds,
/// closest to `round(d / m)`; ties go to fewer parts.
fn split_parts(d: usize, m: f64, bounds: &RrBounds, fs: f64) -> Option<usize> {
    let target = (d as f64 / m).round().max(2.0);
    let max_k = ((d as f64 / (bounds.rr_min * fs)).floor() as usize).max(2);
    (2..=max_k.min(d))
        .filter(|&k| bounds.contains(d / k, fs) && bounds.contains(d.div_ceil(k), fs))
        .min_by(|&a, &b| {
            (a as f64 - target)
                .abs()
                .total_cmp(&(b as f64 - target).abs())
                .then(a.cmp(&b))
        })
}

/// Local-median RR correction.
///
/// Scanning left to right, an interval below `rr_min` is merged with whichever
/// neighbour brings the merged interval closest to the local median (ties go to
/// the earlier neighbour); an interval above `rr_max` gets `round(d / m) - 1`
/// equally spaced beats inserted.
pub fn correct_rr(r_idx: &[usize], fs: u32, bounds: &RrBounds) -> Result<RrCorrection, PeakError> {
    bounds.validate()?;
    if fs == 0 {
        return Err(PeakError::InvalidRate);
    }
    if let Some(p) = r_idx.windows(2).position(|w| w[0] >= w[1]) {
        return Err(PeakError::NotIncreasing(p + 1));
    }
    if r_idx.len() < bounds.window + 1 {
        log::warn!("RR correction skipped: {} peaks < window + 1", r_idx.len());
        return Ok(RrCorrection {
            r_idx: r_idx.to_vec(),
            status: CorrectionStatus::TooFewPeaks,
            merged: 0,
            inserted: 0,
            dropped: 0,
        });
    }
    let fsf = fs as f64;
    let mut r = r_idx.to_vec();
    let (mut merged, mut inserted, mut dropped) = (0, 0, 0);
    let mut i = 0;
    while i + 1 < r.len() {
        let iv: Vec<usize> = r.windows(2).map(|w| w[1] - w[0]).collect();
        let d = iv[i];
        if bounds.contains(d, fsf) {
            i += 1;
            continue;
        }
        let m = local_median(&iv, i, bounds, fsf);
        if (d as f64) < bounds.rr_min * fsf {
            let prev = (i > 0).then(|| iv[i - 1] + d);
            let next = iv.get(i + 1).map(|n| n + d);
            let take_prev = match (prev, next) {
                (Some(p), Some(n)) => (p as f64 - m).abs() <= (n as f64 - m).abs(),
                (Some(_), None) => true,
                (None, _) => false,
            };
            if take_prev {
                r.remove(i);
                i -= 1;
            } else {
                r.remove(i + 1);
            }
            merged += 1;
        } else if let Some(k) = split_parts(d, m, bounds, fsf) {
            let start = r[i];
            let beats: Vec<usize> = (1..k).map(|j| start + (j * d + k / 2) / k).collect();
            let n_new = beats.len();
            r.splice(i + 1..i + 1, beats);
            inserted += n_new;
            i += n_new + 1;
        } else {
            r.drain(i..i + 2);
            dropped += 2;
        }
    }
    let status = if dropped > 0 {
        CorrectionStatus::Unfixable
    } else {
        CorrectionStatus::Corrected
    };
    Ok(RrCorrection {
        r_idx: r,
        status,
        merged,
        inserted,
        dropped,
    })
}

/// For each R peak, the first local minimum at or after it (the descent stops
/// where `signal[c] <= signal[c + 1]`). `None` when the walk reaches the end of
/// the signal.
pub fn find_s_peaks(signal: &[f64], r_idx: &[usize]) -> Vec<Option<usize>> {
    let n = signal.len();
    r_idx
        .iter()
        .map(|&i| {
            if i + 1 >= n {
                return None;
            }
            let mut c = i;
            while signal[c] > signal[c + 1] {
                c += 1;
                if c + 1 >= n {
                    return None;
                }
            }
            Some(c)
        })
        .collect()
}

/// S-peak indices for the R peaks that have one.
pub fn detect_s_peaks(signal: &[f64], r_idx: &[usize]) -> Vec<usize> {
    find_s_peaks(signal, r_idx).into_iter().flatten().collect()
}

/// Greedy one-to-one matching of detections to ground truth within
/// `tolerance_ms`: each truth beat, in order, takes the closest unused
/// detection in range. TN is always 0 since beats have no negative class.
pub fn evaluate_peak_detection(detected: &[usize], truth: &[usize], tolerance_ms: f64, fs: u32) -> ConfusionCounts {
    let tol = tolerance_ms * fs as f64 / 1000.0;
    let mut det = detected.to_vec();
    det.sort_unstable();
    let mut used = vec![false; det.len()];
    let mut tp = 0u64;
    let mut start = 0;
    for &t in truth {
        while start < det.len() && (det[start] as f64) < t as f64 - tol {
            start += 1;
        }
        let best = (start..det.len())
            .take_while(|&j| det[j] as f64 <= t as f64 + tol)
            .filter(|&j| !used[j])
            .min_by_key(|&j| det[j].abs_diff(t));
        if let Some(j) = best {
            used[j] = true;
            tp += 1;
        }
    }
    ConfusionCounts {
        tp,
        tn: 0,
        fp: det.len() as u64 - tp,
        fn_: truth.len() as u64 - tp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn beats_from_rr(rr_s: &[f64], fs: f64) -> Vec<usize> {
        let mut r = vec![100usize];
        for d in rr_s {
            let next = r.last().unwrap() + (d * fs).round() as usize;
            r.push(next);
        }
        r
    }

    fn rr_of(r: &[usize], fs: f64) -> Vec<f64> {
        r.windows(2).map(|w| (w[1] - w[0]) as f64 / fs).collect()
    }

    #[test]
    fn short_interval_merges_with_successor() {
        let r = beats_from_rr(&[0.8, 0.8, 0.1, 0.7, 0.8], 100.0);
        let out = correct_rr(&r, 100, &RrBounds::new(0.3, 2.0, 5).unwrap()).unwrap();
        assert_eq!(out.status, CorrectionStatus::Corrected);
        assert_eq!(out.merged, 1);
        assert_eq!(rr_of(&out.r_idx, 100.0), vec![0.8, 0.8, 0.8, 0.8]);
    }

    #[test]
    fn long_interval_gets_midpoint_beat() {
        let r = beats_from_rr(&[0.8, 1.6, 0.8], 100.0);
        let out = correct_rr(&r, 100, &RrBounds::new(0.3, 1.2, 3).unwrap()).unwrap();
        assert_eq!(out.inserted, 1);
        assert_eq!(out.r_idx, vec![100, 180, 260, 340, 420]);
    }

    #[test]
    fn valid_series_is_a_fixpoint() {
        let r = beats_from_rr(&[0.8, 0.9, 1.0, 0.7, 0.85, 0.95], 100.0);
        let out = correct_rr(&r, 100, &RrBounds::default()).unwrap();
        assert_eq!(out.r_idx, r);
        assert_eq!(out.status, CorrectionStatus::Corrected);
    }

    #[test]
    fn too_few_peaks_are_returned_unchanged() {
        let r = vec![0, 10, 20, 30];
        let out = correct_rr(&r, 100, &RrBounds::default()).unwrap();
        assert_eq!(out.status, CorrectionStatus::TooFewPeaks);
        assert_eq!(out.r_idx, r);
    }

    #[test]
    fn rejects_unsorted_input_and_bad_bounds() {
        assert_eq!(
            correct_rr(&[0, 50, 40], 100, &RrBounds::default()),
            Err(PeakError::NotIncreasing(2))
        );
        assert!(RrBounds::new(0.5, 0.4, 5).is_err());
        assert!(RrBounds::new(0.3, 2.0, 4).is_err());
        assert!(RrBounds::new(0.3, 2.0, 1).is_err());
    }

    #[test]
    fn tight_bounds_flag_unfixable_gap() {
        // 0.9 s cannot be split into parts within [0.5, 0.6].
        let r = beats_from_rr(&[0.55, 0.55, 0.9, 0.55, 0.55, 0.55], 100.0);
        let out = correct_rr(&r, 100, &RrBounds::new(0.5, 0.6, 3).unwrap()).unwrap();
        assert_eq!(out.status, CorrectionStatus::Unfixable);
        assert_eq!(out.dropped, 2);
        assert!(out.r_idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn s_peak_is_first_descent_stop() {
        let x = [0.0, 5.0, 3.0, 1.0, 2.0, 0.0];
        assert_eq!(detect_s_peaks(&x, &[1]), vec![3]);
    }

    #[test]
    fn s_walk_reaching_end_yields_nothing() {
        let x = [0.0, 1.0, 0.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(find_s_peaks(&x, &[1, 3]), vec![Some(2), None]);
        assert_eq!(detect_s_peaks(&x, &[1, 3]), vec![2]);
        assert_eq!(detect_s_peaks(&x, &[6]), Vec::<usize>::new());
    }

    #[test]
    fn r_at_local_minimum_is_its_own_s() {
        let x = [3.0, 1.0, 2.0, 5.0];
        assert_eq!(detect_s_peaks(&x, &[1]), vec![1]);
    }

    #[test]
    fn flat_signal_has_no_peaks() {
        assert!(detect_r_peaks(&vec![0.0; 1000], 100, &HamiltonConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn short_signal_is_rejected() {
        assert!(matches!(
            detect_r_peaks(&vec![0.0; 150], 100, &HamiltonConfig::default()),
            Err(PeakError::SignalTooShort { .. })
        ));
    }

    #[test]
    fn table_one_row() {
        let truth: Vec<usize> = (0..200).map(|i| 100 + i * 100).collect();
        let detected: Vec<usize> = truth.iter().copied().filter(|t| t % 5000 != 0).collect();
        assert_eq!(detected.len(), 196);
        let c = evaluate_peak_detection(&detected, &truth, 40.0, 100);
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (196, 0, 0, 4));
    }

    #[test]
    fn identical_detection_is_perfect() {
        let truth: Vec<usize> = (0..50).map(|i| 37 + i * 83).collect();
        let c = evaluate_peak_detection(&truth, &truth, 40.0, 100);
        assert_eq!((c.tp, c.fp, c.fn_), (50, 0, 0));
    }

    #[test]
    fn each_detection_matches_once() {
        let c = evaluate_peak_detection(&[100], &[98, 102], 40.0, 100);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 0, 1));
        let c = evaluate_peak_detection(&[100, 300], &[100], 40.0, 100);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
    }

    proptest! {
        #[test]
        fn perturbation_within_tolerance_is_all_tp(
            offsets in proptest::collection::vec(-4i64..=4, 1..100)
        ) {
            let truth: Vec<usize> = (0..offsets.len()).map(|i| 50 + i * 80).collect();
            let detected: Vec<usize> = truth.iter().zip(&offsets).map(|(&t, &o)| (t as i64 + o) as usize).collect();
            let c = evaluate_peak_detection(&detected, &truth, 40.0, 100);
            prop_assert_eq!(c.tp as usize, truth.len());
            prop_assert_eq!(c.fp + c.fn_, 0);
        }

        #[test]
        fn s_positions_ignore_samples_after_last_s(
            base in proptest::collection::vec(-10.0f64..10.0, 20..120),
            tail in proptest::collection::vec(-10.0f64..10.0, 0..40),
        ) {
            let r: Vec<usize> = (0..base.len()).step_by(7).collect();
            let before = find_s_peaks(&base, &r);
            let mut longer = base.clone();
            longer.extend_from_slice(&tail);
            let after = find_s_peaks(&longer, &r);
            for (b, a) in before.iter().zip(&after) {
                if let Some(s) = b {
                    prop_assert_eq!(Some(*s), *a);
                }
            }
        }
    }
}
