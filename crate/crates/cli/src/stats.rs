use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use apnea_core::feature_extract::{channel_name, moments, FeatureSegment};
use apnea_core::wfdb_io::read_feature_file;
use clap::Args;
use serde::Serialize;

use crate::artifacts::{write_file, write_json};
use crate::config::PipelineConfig;
use crate::Outcome;

pub const N_BINS: usize = 50;

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Feature file (default `<output_dir>/features/train-rs.apnfeat`).
    pub features: Option<PathBuf>,
    /// Destination directory (default `<output_dir>/stats`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub channel: String,
    pub lower: f64,
    pub upper: f64,
    pub non_sa: Vec<u64>,
    pub sa: Vec<u64>,
}

impl Histogram {
    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.upper - self.lower) / N_BINS as f64;
        (self.lower + w * bin as f64, self.lower + w * (bin + 1) as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lower,upper,non_sa,sa\n");
        for b in 0..N_BINS {
            let (lo, hi) = self.edges(b);
            let _ = writeln!(out, "{b},{lo},{hi},{},{}", self.non_sa[b], self.sa[b]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub channel: String,
    pub mean_non_sa: f64,
    pub mean_sa: f64,
    /// (SA mean - non-SA mean) / pooled std.
    pub standardized_difference: f64,
}

/// Fixed-width histogram over the pooled range of the physical values of one
/// channel; the maximum lands in the last bin.
pub fn histogram(segments: &[FeatureSegment], channel: usize) -> Histogram {
    let values: Vec<(f64, bool)> = segments
        .iter()
        .flat_map(|s| {
            let sa = s.label.is_apnea();
            s.denormalized(channel).into_iter().map(move |v| (v, sa))
        })
        .collect();
    let lower = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let upper = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let mut h = Histogram {
        channel: channel_name(channel).to_string(),
        lower,
        upper,
        non_sa: vec![0; N_BINS],
        sa: vec![0; N_BINS],
    };
    let width = upper - lower;
    for (v, sa) in values {
        let bin = if width > 0.0 {
            (((v - lower) / width * N_BINS as f64) as usize).min(N_BINS - 1)
        } else {
            0
        };
        if sa {
            h.sa[bin] += 1;
        } else {
            h.non_sa[bin] += 1;
        }
    }
    h
}

pub fn class_summary(segments: &[FeatureSegment], channel: usize) -> ClassSummary {
    let pick = |sa: bool| -> Vec<f64> {
        segments
            .iter()
            .filter(|s| s.label.is_apnea() == sa)
            .flat_map(|s| s.denormalized(channel))
            .collect()
    };
    let (non, sa) = (pick(false), pick(true));
    let (m0, s0) = moments(&non);
    let (m1, s1) = moments(&sa);
    let pooled = ((s0 * s0 + s1 * s1) / 2.0).sqrt();
    ClassSummary {
        channel: channel_name(channel).to_string(),
        mean_non_sa: m0,
        mean_sa: m1,
        standardized_difference: if pooled > 0.0 { (m1 - m0) / pooled } else { 0.0 },
    }
}

pub fn cmd_stats(cfg: &PipelineConfig, args: &StatsArgs) -> Result<Outcome> {
    let path = args
        .features
        .clone()
        .unwrap_or_else(|| cfg.dir("features").join("train-rs.apnfeat"));
    let segments = read_feature_file(&path).with_context(|| format!("stats: reading {}", path.display()))?;
    if segments.is_empty() {
        bail!("stats: {} holds no segments", path.display());
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.dir("stats"));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
    let n_ch = segments[0].n_channels();
    let mut summaries = Vec::with_capacity(n_ch);
    let mut text = format!(
        "{} segments ({} SA)\n{:<8} {:>14} {:>14} {:>10}\n",
        segments.len(),
        segments.iter().filter(|s| s.label.is_apnea()).count(),
        "channel",
        "non-SA mean",
        "SA mean",
        "std diff"
    );
    for c in 0..n_ch {
        let h = histogram(&segments, c);
        write_file(&out.join(format!("{stem}-{}.csv", h.channel)), h.to_csv().as_bytes())?;
        let s = class_summary(&segments, c);
        let _ = writeln!(
            text,
            "{:<8} {:>14.5} {:>14.5} {:>+10.3}",
            s.channel, s.mean_non_sa, s.mean_sa, s.standardized_difference
        );
        summaries.push(s);
    }
    if let Some(r) = summaries.iter().find(|s| s.channel == "r_amp") {
        let _ = writeln!(
            text,
            "R amplitude is {} in SA minutes",
            if r.mean_sa < r.mean_non_sa { "lower" } else { "not lower" }
        );
    }
    print!("{text}");
    write_file(&out.join(format!("{stem}-summary.txt")), text.as_bytes())?;
    write_json(&out.join(format!("{stem}-summary.json")), &summaries)?;
    Ok(Outcome::Success)
}

#[cfg(test)]
mod tests {
    use super::*;
    use apnea_core::Label;

    fn seg(label: Label, values: Vec<f64>) -> FeatureSegment {
        FeatureSegment {
            record_id: "t".into(),
            minute_index: 0,
            label,
            beat_count: 0,
            channels: vec![values],
            channel_mean: vec![1.0],
            channel_std: vec![2.0],
        }
    }

    #[test]
    fn single_segment_fills_900_counts() {
        let s = seg(Label::Apnea, (0..900).map(|i| (i as f64 / 450.0) - 1.0).collect());
        let h = histogram(&[s], 0);
        assert_eq!(h.sa.iter().sum::<u64>(), 900);
        assert_eq!(h.non_sa.iter().sum::<u64>(), 0);
        assert_eq!(h.lower, -1.0);
        assert!((h.upper - (899.0 / 450.0 * 2.0 - 1.0)).abs() < 1e-12);
        assert!(h.sa[N_BINS - 1] > 0);
    }

    #[test]
    fn constant_channel_uses_one_bin() {
        let h = histogram(&[seg(Label::NonApnea, vec![0.0; 900])], 0);
        assert_eq!(h.non_sa[0], 900);
        assert_eq!(h.to_csv().lines().count(), N_BINS + 1);
    }

    #[test]
    fn summary_uses_physical_values() {
        let segs = [seg(Label::NonApnea, vec![1.0; 900]), seg(Label::Apnea, vec![-1.0; 900])];
        let s = class_summary(&segs, 0);
        assert_eq!(s.mean_non_sa, 3.0);
        assert_eq!(s.mean_sa, -1.0);
    }
}
