//! Five-minute beat-feature segments: windowing, channel extraction, natural
//! cubic spline resampling to 900 points and per-channel z-scoring.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::peak_detect::BeatSeries;
use crate::wfdb_io::{EcgRecord, Label};

/// Points per channel per segment (3 Hz over five minutes).
pub const SEGMENT_POINTS: usize = 900;
pub const WINDOW_SECONDS: f64 = 300.0;
/// Minutes of context taken before and after the labelled minute.
pub const CONTEXT_MINUTES: usize = 2;
pub const MIN_KNOTS: usize = 4;

const CHANNEL_NAMES: [&str; 4] = ["rr", "r_amp", "ss", "s_amp"];

pub fn channel_name(index: usize) -> &'static str {
    CHANNEL_NAMES.get(index).copied().unwrap_or("unknown")
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("minute {minute} has no label")]
    NoLabel { minute: usize },
    #[error("minute {minute} lacks two minutes of context on both sides")]
    InsufficientContext { minute: usize },
    #[error("only {count} complete beats in window (need {MIN_KNOTS})")]
    TooFewBeats { count: usize },
    #[error("only {count} knots (need {MIN_KNOTS})")]
    TooFewKnots { count: usize },
    #[error("knot times must be strictly increasing (violated at knot {0})")]
    DuplicateKnot(usize),
    #[error("non-finite knot at index {0}")]
    NonFinite(usize),
    #[error("{records} records but {beats} beat series")]
    InputMismatch { records: usize, beats: usize },
}

/// Channel layout: `ROnly` = (RR, R-amp), `RAndS` = (RR, R-amp, SS, S-amp).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    #[serde(rename = "r")]
    ROnly,
    #[serde(rename = "rs")]
    RAndS,
}

impl FeatureSet {
    pub fn n_channels(self) -> usize {
        match self {
            FeatureSet::ROnly => 2,
            FeatureSet::RAndS => 4,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            FeatureSet::ROnly => "r",
            FeatureSet::RAndS => "rs",
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "r" => Ok(FeatureSet::ROnly),
            "rs" => Ok(FeatureSet::RAndS),
            other => Err(format!("unknown feature set {other:?} (expected r or rs)")),
        }
    }
}

/// One labelled minute with its normalised channels. `channel_mean` and
/// `channel_std` are the moments removed by normalisation, so the physical
/// values are `z * std + mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSegment {
    pub record_id: String,
    pub minute_index: u32,
    pub label: Label,
    pub beat_count: u32,
    pub channels: Vec<Vec<f64>>,
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
}

impl FeatureSegment {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Channel values in physical units (seconds or mV).
    pub fn denormalized(&self, channel: usize) -> Vec<f64> {
        let (m, s) = (self.channel_mean[channel], self.channel_std[channel]);
        self.channels[channel].iter().map(|z| z * s + m).collect()
    }

    /// Keeps the first `n` channels.
    pub fn truncated(&self, n: usize) -> FeatureSegment {
        let mut out = self.clone();
        out.channels.truncate(n);
        out.channel_mean.truncate(n);
        out.channel_std.truncate(n);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryPolicy {
    /// Minutes without full context are rejected.
    #[default]
    Drop,
    /// The five-minute window slides inward to fit inside the record.
    Shift,
}

/// Sample range `[minute - 2, minute + 3)` minutes.
pub fn assemble_window(record: &EcgRecord, minute: usize) -> Result<Range<usize>, FeatureError> {
    window_with_policy(record, minute, BoundaryPolicy::Drop)
}

pub fn window_with_policy(
    record: &EcgRecord,
    minute: usize,
    policy: BoundaryPolicy,
) -> Result<Range<usize>, FeatureError> {
    if minute >= record.n_labeled_minutes() {
        return Err(FeatureError::NoLabel { minute });
    }
    let per_minute = record.samples_per_minute();
    let span = (2 * CONTEXT_MINUTES + 1) * per_minute;
    let len = record.samples().len();
    match policy {
        BoundaryPolicy::Drop => {
            if minute < CONTEXT_MINUTES {
                return Err(FeatureError::InsufficientContext { minute });
            }
            let start = (minute - CONTEXT_MINUTES) * per_minute;
            let end = start + span;
            if end > len {
                return Err(FeatureError::InsufficientContext { minute });
            }
            Ok(start..end)
        }
        BoundaryPolicy::Shift => {
            if span > len {
                return Err(FeatureError::InsufficientContext { minute });
            }
            let start = (minute.saturating_sub(CONTEXT_MINUTES) * per_minute).min(len - span);
            Ok(start..start + span)
        }
    }
}

/// Four `(time_s, value)` series for one window, times relative to its start.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatChannels {
    pub rr: Vec<(f64, f64)>,
    pub r_amp: Vec<(f64, f64)>,
    pub ss: Vec<(f64, f64)>,
    pub s_amp: Vec<(f64, f64)>,
    pub beat_count: usize,
}

impl BeatChannels {
    pub fn ordered(&self) -> [&[(f64, f64)]; 4] {
        [&self.rr, &self.r_amp, &self.ss, &self.s_amp]
    }
}

/// Beats whose R and S both fall inside `window`. Interval series are stamped
/// at the later peak of each pair; the earlier peak may precede the window.
pub fn extract_channels(beats: &BeatSeries, window: &Range<usize>) -> Result<BeatChannels, FeatureError> {
    let fs = beats.fs as f64;
    let t = |idx: usize| (idx - window.start) as f64 / fs;
    let inside: Vec<usize> = (0..beats.len())
        .filter(|&k| window.contains(&beats.r_idx[k]) && window.contains(&beats.s_idx[k]))
        .collect();
    if inside.len() < MIN_KNOTS {
        return Err(FeatureError::TooFewBeats { count: inside.len() });
    }
    let mut out = BeatChannels {
        rr: Vec::with_capacity(inside.len()),
        r_amp: Vec::with_capacity(inside.len()),
        ss: Vec::with_capacity(inside.len()),
        s_amp: Vec::with_capacity(inside.len()),
        beat_count: inside.len(),
    };
    for &k in &inside {
        let (r, s) = (beats.r_idx[k], beats.s_idx[k]);
        out.r_amp.push((t(r), beats.r_amp[k]));
        out.s_amp.push((t(s), beats.s_amp[k]));
        if k > 0 {
            out.rr.push((t(r), (r - beats.r_idx[k - 1]) as f64 / fs));
            out.ss.push((t(s), (s - beats.s_idx[k - 1]) as f64 / fs));
        }
    }
    Ok(out)
}

/// Natural cubic spline (zero second derivative at both ends).
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self, FeatureError> {
        let n = x.len();
        assert_eq!(n, y.len(), "knot coordinate lengths differ");
        if n < 2 {
            return Err(FeatureError::TooFewKnots { count: n });
        }
        if let Some(i) = (0..n).find(|&i| !x[i].is_finite() || !y[i].is_finite()) {
            return Err(FeatureError::NonFinite(i));
        }
        if let Some(i) = x.windows(2).position(|w| w[0] >= w[1]) {
            return Err(FeatureError::DuplicateKnot(i + 1));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second derivatives.
            let k = n - 2;
            let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                diag[j] = 2.0 * (h[i - 1] + h[i]);
                rhs[j] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
            }
            for j in 1..k {
                let w = h[j] / diag[j - 1];
                diag[j] -= w * h[j];
                rhs[j] -= w * rhs[j - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = (rhs[j] - h[j + 1] * m[j + 2]) / diag[j];
            }
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    /// Evaluates the spline; queries outside the knot span return the nearest
    /// boundary knot value.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&xi| xi <= t) - 1;
        let h = self.x[i + 1] - self.x[i];
        let (mi, mj) = (self.m[i], self.m[i + 1]);
        let b = (self.y[i + 1] - self.y[i]) / h - h * (2.0 * mi + mj) / 6.0;
        let c = 0.5 * mi;
        let d = (mj - mi) / (6.0 * h);
        let dx = t - self.x[i];
        self.y[i] + dx * (b + dx * (c + dx * d))
    }
}

/// Uniform evaluation grid `t_j = 300 j / 899`.
pub fn segment_grid() -> impl Iterator<Item = f64> {
    (0..SEGMENT_POINTS).map(|j| WINDOW_SECONDS * j as f64 / (SEGMENT_POINTS - 1) as f64)
}

/// Natural spline through the knots sampled on the 900-point segment grid.
pub fn interpolate_to_900(knots: &[(f64, f64)]) -> Result<Vec<f64>, FeatureError> {
    if knots.len() < MIN_KNOTS {
        return Err(FeatureError::TooFewKnots { count: knots.len() });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = knots.iter().copied().unzip();
    let spline = NaturalSpline::new(&x, &y)?;
    Ok(segment_grid().map(|t| spline.eval(t)).collect())
}

/// Population mean and standard deviation.
pub fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Spread below this fraction of the mean is interpolation round-off.
const ZERO_VARIANCE_RTOL: f64 = 1e-10;

fn zero_variance(mean: f64, std: f64) -> bool {
    std == 0.0 || std <= ZERO_VARIANCE_RTOL * mean.abs()
}

/// Z-score with the channel's own population moments; constant channels map to zeros.
pub fn normalize(channel: &[f64]) -> Vec<f64> {
    normalize_with_moments(channel).0
}

pub fn normalize_with_moments(channel: &[f64]) -> (Vec<f64>, f64, f64) {
    let (mean, std) = moments(channel);
    if zero_variance(mean, std) {
        return (vec![0.0; channel.len()], mean, 0.0);
    }
    (channel.iter().map(|v| (v - mean) / std).collect(), mean, std)
}

/// Window, extract, resample and normalise one labelled minute.
pub fn build_segment(
    record: &EcgRecord,
    beats: &BeatSeries,
    minute: usize,
    set: FeatureSet,
    policy: BoundaryPolicy,
) -> Result<FeatureSegment, FeatureError> {
    let window = window_with_policy(record, minute, policy)?;
    let raw = extract_channels(beats, &window)?;
    let mut seg = FeatureSegment {
        record_id: record.record_id().to_string(),
        minute_index: minute as u32,
        label: record.labels()[minute],
        beat_count: raw.beat_count as u32,
        channels: Vec::with_capacity(set.n_channels()),
        channel_mean: Vec::with_capacity(set.n_channels()),
        channel_std: Vec::with_capacity(set.n_channels()),
    };
    for series in raw.ordered().into_iter().take(set.n_channels()) {
        let resampled = interpolate_to_900(series)?;
        let (z, mean, std) = normalize_with_moments(&resampled);
        seg.channels.push(z);
        seg.channel_mean.push(mean);
        seg.channel_std.push(std);
    }
    Ok(seg)
}

/// Per-record accounting of labelled minutes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordLedger {
    pub record_id: String,
    pub labeled_minutes: usize,
    pub retained: usize,
    pub retained_apnea: usize,
    pub rejected_context: usize,
    pub rejected_beats: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetBuild {
    pub segments: Vec<FeatureSegment>,
    pub ledger: Vec<RecordLedger>,
}

impl DatasetBuild {
    pub fn total(&self, f: impl Fn(&RecordLedger) -> usize) -> usize {
        self.ledger.iter().map(f).sum()
    }
}

/// One segment per labelled minute that passes the context and knot checks,
/// ordered by (record id, minute).
pub fn build_dataset(
    records: &[EcgRecord],
    beats: &[BeatSeries],
    set: FeatureSet,
    policy: BoundaryPolicy,
) -> Result<DatasetBuild, FeatureError> {
    if records.len() != beats.len() {
        return Err(FeatureError::InputMismatch {
            records: records.len(),
            beats: beats.len(),
        });
    }
    let mut per_record: Vec<(Vec<FeatureSegment>, RecordLedger)> = records
        .par_iter()
        .zip(beats.par_iter())
        .map(|(record, beats)| {
            let mut ledger = RecordLedger {
                record_id: record.record_id().to_string(),
                labeled_minutes: record.n_labeled_minutes(),
                ..Default::default()
            };
            let mut segs = Vec::new();
            for minute in 0..record.n_labeled_minutes() {
                match build_segment(record, beats, minute, set, policy) {
                    Ok(seg) => {
                        ledger.retained += 1;
                        if seg.label.is_apnea() {
                            ledger.retained_apnea += 1;
                        }
                        segs.push(seg);
                    }
                    Err(FeatureError::InsufficientContext { .. }) => ledger.rejected_context += 1,
                    Err(_) => ledger.rejected_beats += 1,
                }
            }
            (segs, ledger)
        })
        .collect();
    per_record.sort_by(|a, b| a.1.record_id.cmp(&b.1.record_id));
    let mut out = DatasetBuild::default();
    for (segs, ledger) in per_record {
        out.segments.extend(segs);
        out.ledger.push(ledger);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(minutes: usize, fs: u32) -> EcgRecord {
        EcgRecord::new(
            "t",
            fs,
            vec![0.0; minutes * 60 * fs as usize],
            vec![Label::NonApnea; minutes],
        )
        .unwrap()
    }

    fn beats_at(times_s: &[f64], fs: u32) -> BeatSeries {
        let r_idx: Vec<usize> = times_s.iter().map(|t| (t * fs as f64).round() as usize).collect();
        BeatSeries {
            fs,
            s_idx: r_idx.iter().map(|r| r + 4).collect(),
            r_amp: vec![1.0; r_idx.len()],
            s_amp: vec![-0.3; r_idx.len()],
            r_idx,
        }
    }

    #[test]
    fn window_arithmetic() {
        let rec = record(60, 100);
        assert_eq!(assemble_window(&rec, 10).unwrap(), 48_000..78_000);
        assert_eq!(
            assemble_window(&rec, 0),
            Err(FeatureError::InsufficientContext { minute: 0 })
        );
        assert_eq!(
            assemble_window(&rec, 59),
            Err(FeatureError::InsufficientContext { minute: 59 })
        );
        assert!(assemble_window(&rec, 57).is_ok());
        assert_eq!(assemble_window(&rec, 60), Err(FeatureError::NoLabel { minute: 60 }));
    }

    #[test]
    fn shift_policy_slides_window_inward() {
        let rec = record(10, 100);
        assert_eq!(window_with_policy(&rec, 0, BoundaryPolicy::Shift).unwrap(), 0..30_000);
        assert_eq!(window_with_policy(&rec, 9, BoundaryPolicy::Shift).unwrap(), 30_000..60_000);
        let short = record(4, 100);
        assert!(window_with_policy(&short, 1, BoundaryPolicy::Shift).is_err());
    }

    #[test]
    fn rr_series_is_stamped_at_later_peak() {
        let beats = beats_at(&[1.0, 2.0, 3.0, 4.0], 100);
        let ch = extract_channels(&beats, &(0..30_000)).unwrap();
        assert_eq!(ch.rr, vec![(2.0, 1.0), (3.0, 1.0), (4.0, 1.0)]);
        assert_eq!(ch.r_amp.len(), 4);
        assert_eq!(ch.beat_count, 4);
    }

    #[test]
    fn interval_uses_beat_before_window() {
        let beats = beats_at(&[0.5, 61.0, 62.0, 63.0, 64.0], 100);
        let ch = extract_channels(&beats, &(6000..36_000)).unwrap();
        assert_eq!(ch.rr.len(), 4);
        assert!((ch.rr[0].1 - 60.5).abs() < 1e-12);
        assert_eq!(ch.rr[0].0, 1.0);
    }

    #[test]
    fn three_beats_are_rejected() {
        let beats = beats_at(&[1.0, 2.0, 3.0], 100);
        assert_eq!(
            extract_channels(&beats, &(0..30_000)),
            Err(FeatureError::TooFewBeats { count: 3 })
        );
    }

    #[test]
    fn sparse_window_still_builds() {
        // Beats only during the first minute; the spline extends flat to 300 s.
        let times: Vec<f64> = (0..40).map(|k| 0.5 + 1.3 * k as f64 + 0.1 * (k % 3) as f64).collect();
        let beats = beats_at(&times, 100);
        let ch = extract_channels(&beats, &(0..30_000)).unwrap();
        let out = interpolate_to_900(&ch.rr).unwrap();
        assert_eq!(out.len(), 900);
        assert!(out.iter().all(|v| v.is_finite()));
        assert_eq!(out[899], ch.rr.last().unwrap().1);
    }

    #[test]
    fn constant_knots_give_constant_output() {
        let knots: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 30.0 + 1.0, 0.75)).collect();
        assert!(interpolate_to_900(&knots).unwrap().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn interpolation_at_grid_knots_is_identity() {
        let grid: Vec<f64> = segment_grid().collect();
        let knots: Vec<(f64, f64)> = grid.iter().map(|&t| (t, (t / 17.0).sin() + t * 0.01)).collect();
        let out = interpolate_to_900(&knots).unwrap();
        for (o, k) in out.iter().zip(&knots) {
            assert_eq!(*o, k.1);
        }
    }

    #[test]
    fn duplicate_knots_are_rejected() {
        let knots = [(0.0, 1.0), (1.0, 2.0), (1.0, 3.0), (2.0, 1.0)];
        assert_eq!(interpolate_to_900(&knots), Err(FeatureError::DuplicateKnot(2)));
        assert!(matches!(
            interpolate_to_900(&knots[..3]),
            Err(FeatureError::TooFewKnots { count: 3 })
        ));
    }

    #[test]
    fn spline_matches_hand_solved_case() {
        // Knots (0,0), (1,1), (2,0): natural spline has M1 = -3.
        let s = NaturalSpline::new(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0]).unwrap();
        // On [0,1]: s(t) = 1.5 t - 0.5 t^3.
        for t in [0.25, 0.5, 0.75] {
            assert!((s.eval(t) - (1.5 * t - 0.5 * t * t * t)).abs() < 1e-14);
        }
    }

    #[test]
    fn toy_zscore() {
        let z = normalize(&[1.0, 2.0, 3.0]);
        let expected = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in z.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(normalize(&[4.2; 7]), vec![0.0; 7]);
    }

    #[test]
    fn ten_minute_record_yields_six_segments() {
        let rec = record(10, 100);
        let times: Vec<f64> = (0..599).map(|k| 0.5 + k as f64).collect();
        let beats = beats_at(&times, 100);
        let build = build_dataset(&[rec], &[beats], FeatureSet::RAndS, BoundaryPolicy::Drop).unwrap();
        let minutes: Vec<u32> = build.segments.iter().map(|s| s.minute_index).collect();
        assert_eq!(minutes, vec![2, 3, 4, 5, 6, 7]);
        let l = &build.ledger[0];
        assert_eq!((l.retained, l.rejected_context, l.rejected_beats), (6, 4, 0));
    }

    #[test]
    fn empty_input_gives_empty_dataset() {
        let build = build_dataset(&[], &[], FeatureSet::ROnly, BoundaryPolicy::Drop).unwrap();
        assert!(build.segments.is_empty() && build.ledger.is_empty());
    }

    proptest! {
        #[test]
        fn normalized_moments(values in proptest::collection::vec(-100.0f64..100.0, 900)) {
            let (mean0, std0) = moments(&values);
            prop_assume!(!zero_variance(mean0, std0));
            let z = normalize(&values);
            let (mean, std) = moments(&z);
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((std - 1.0).abs() < 1e-9);
        }
    }
}
