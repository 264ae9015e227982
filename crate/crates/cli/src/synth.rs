use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use apnea_core::metrics_eval::{compute_metrics, MetricsReport};
use apnea_core::peak_detect::evaluate_peak_detection;
use apnea_core::synth_oracle::{generate, generate_labeled_pair, separable_specs, HeartRate, SynthSpec};
use apnea_core::wfdb_io::write_record;
use apnea_core::EcgRecord;
use clap::Args;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::{BeatArgs, Outcome};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Destination directory (default `<output_dir>/synth`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Labelled training records, named a01, a02, ...
    #[arg(long, default_value_t = 8)]
    pub train_records: usize,
    /// Labelled test records, named x01, x02, ...
    #[arg(long, default_value_t = 4)]
    pub test_records: usize,
    #[arg(long, default_value_t = 40)]
    pub minutes: usize,
    /// WFDB signal format (212 or 16).
    #[arg(long, default_value_t = 212)]
    pub format: u16,
    /// ADC counts per mV.
    #[arg(long, default_value_t = 200.0)]
    pub gain: f64,

    /// Score the beat detector against ground truth instead of writing records.
    #[arg(long)]
    pub check_peaks: bool,
    #[arg(long, default_value_t = 200)]
    pub beats: usize,
    #[arg(long, default_value_t = 72.0)]
    pub bpm: f64,
    #[arg(long, default_value_t = 10.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 40.0)]
    pub match_tol_ms: f64,
    #[command(flatten)]
    pub beat_overrides: BeatArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeakCheck {
    pub beats: usize,
    pub snr_db: f64,
    pub tolerance_ms: f64,
    pub r: MetricsReport,
    pub s: MetricsReport,
}

/// Writes `train_records + test_records` alternating SA / non-SA records.
pub fn write_labeled_set(args: &SynthArgs, seed: u64, out: &std::path::Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let jobs: Vec<(String, u64)> = (0..args.train_records)
        .map(|i| (format!("a{:02}", i + 1), i as u64))
        .chain((0..args.test_records).map(|i| (format!("x{:02}", i + 1), 500 + i as u64)))
        .collect();
    for (id, offset) in &jobs {
        let (sa, non) = separable_specs(seed.wrapping_mul(1000).wrapping_add(*offset));
        let (rec, _) = generate_labeled_pair(&sa, &non, args.minutes)?;
        let rec = EcgRecord::new(id.clone(), rec.fs(), rec.samples().to_vec(), rec.labels().to_vec())?;
        write_record(out, &rec, args.format, args.gain).with_context(|| format!("writing record {id}"))?;
    }
    Ok(jobs.into_iter().map(|(id, _)| id).collect())
}

pub fn check_peaks(cfg: &PipelineConfig, args: &SynthArgs, seed: u64) -> Result<PeakCheck> {
    if args.beats == 0 {
        bail!("--beats must be positive");
    }
    let spec = SynthSpec {
        duration_s: args.beats as f64 * 60.0 / args.bpm,
        heart_rate: HeartRate::Constant(args.bpm),
        noise_snr_db: Some(args.snr_db),
        seed,
        ..SynthSpec::default()
    };
    let (record, truth) = generate(&spec)?;
    let found = cfg.beats.extract_beats(&record)?;
    let fs = record.fs();
    let r = evaluate_peak_detection(&found.beats.r_idx, &truth.r_idx, args.match_tol_ms, fs);
    let s = evaluate_peak_detection(&found.beats.s_idx, &truth.s_idx, args.match_tol_ms, fs);
    Ok(PeakCheck {
        beats: truth.len(),
        snr_db: args.snr_db,
        tolerance_ms: args.match_tol_ms,
        r: compute_metrics(&r),
        s: compute_metrics(&s),
    })
}

pub fn cmd_synth(cfg: &PipelineConfig, args: &SynthArgs, seed: u64) -> Result<Outcome> {
    if args.check_peaks {
        let mut cfg = cfg.clone();
        args.beat_overrides.apply(&mut cfg);
        cfg.validate()?;
        let check = check_peaks(&cfg, args, seed)?;
        let row = |name: &str, m: &MetricsReport| {
            let c = &m.counts;
            println!(
                "{name}: F1 {:.2}%  sensitivity {:.2}%  (TP {} FP {} FN {})",
                100.0 * m.f1_sa,
                100.0 * m.sensitivity,
                c.tp,
                c.fp,
                c.fn_
            );
        };
        println!(
            "{} beats, SNR {} dB, tolerance {} ms",
            check.beats, check.snr_db, check.tolerance_ms
        );
        row("R", &check.r);
        row("S", &check.s);
        crate::artifacts::write_json(&cfg.dir("reports").join("peak_check.json"), &check)?;
        return Ok(Outcome::Success);
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.dir("synth"));
    let ids = write_labeled_set(args, seed, &out)?;
    println!("wrote {} records ({} min each) to {}", ids.len(), args.minutes, out.display());
    Ok(Outcome::Success)
}
