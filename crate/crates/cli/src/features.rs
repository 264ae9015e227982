use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use apnea_core::feature_extract::{build_dataset, BoundaryPolicy, FeatureSegment, FeatureSet, RecordLedger};
use apnea_core::wfdb_io::{load_record, read_beat_file, write_beat_file, write_feature_file, DatasetSplit};
use apnea_core::{BeatSeries, EcgRecord};
use rayon::prelude::*;
use serde::Serialize;

use crate::artifacts::{hashed_path, sha256_hex, write_file, write_json};
use crate::config::PipelineConfig;
use crate::ingest::ecg_record_ids;
use crate::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Published Apnea-ECG segment counts the reconciliation is laid against.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Reference {
    pub total: usize,
    pub apnea: usize,
    pub apnea_fraction: f64,
}

pub fn reference_counts(split: Split) -> Reference {
    match split {
        Split::Train => Reference {
            total: 16_709,
            apnea: 6_473,
            apnea_fraction: 0.3874,
        },
        Split::Test => Reference {
            total: 16_945,
            apnea: 6_490,
            apnea_fraction: 0.3830,
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    pub split: Split,
    pub feature_set: FeatureSet,
    pub file: Option<PathBuf>,
    pub records: usize,
    pub labeled_minutes: usize,
    pub retained: usize,
    pub retained_apnea: usize,
    pub apnea_fraction: f64,
    pub rejected_context: usize,
    pub rejected_beats: usize,
    pub reference: Reference,
    /// reference total minus retained.
    pub gap: i64,
    pub ledger: Vec<RecordLedger>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordFailure {
    pub record_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureReport {
    pub boundary: BoundaryPolicy,
    pub splits: Vec<SplitReport>,
    pub failures: Vec<RecordFailure>,
}

struct RecordResult {
    split: Split,
    per_set: Vec<(Vec<FeatureSegment>, RecordLedger)>,
}

fn beat_cache_path(cfg: &PipelineConfig, record: &EcgRecord) -> Result<PathBuf> {
    let samples: Vec<u8> = record.samples().iter().flat_map(|v| v.to_le_bytes()).collect();
    let settings = serde_json::to_vec(&cfg.beats)?;
    let hash = sha256_hex(&[&record.fs().to_le_bytes(), &samples, &settings]);
    Ok(hashed_path(&cfg.dir("beats"), record.record_id(), &hash, "apnbeat"))
}

/// Beat series for `record`, reused from the cache when its inputs are unchanged.
pub fn beats_for(cfg: &PipelineConfig, record: &EcgRecord) -> Result<BeatSeries> {
    let path = beat_cache_path(cfg, record)?;
    if path.exists() {
        match read_beat_file(&path) {
            Ok(beats) => return Ok(beats),
            Err(e) => log::warn!("ignoring unreadable beat cache {}: {e}", path.display()),
        }
    }
    let found = cfg.beats.extract_beats(record)?;
    log::info!(
        "{}: {} R peaks detected, {} beats kept, {} unpaired, correction {:?}",
        record.record_id(),
        found.detected_r,
        found.beats.len(),
        found.unpaired,
        found.correction
    );
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_beat_file(&path, &found.beats)?;
    Ok(found.beats)
}

fn process_record(cfg: &PipelineConfig, dir: &Path, id: &str, split: Split) -> Result<RecordResult> {
    let record = load_record(dir, id)?;
    let beats = beats_for(cfg, &record)?;
    let mut per_set = Vec::with_capacity(cfg.feature_sets.len());
    for &set in &cfg.feature_sets {
        let built = build_dataset(std::slice::from_ref(&record), std::slice::from_ref(&beats), set, cfg.boundary)?;
        let ledger = built.ledger.into_iter().next().unwrap_or_default();
        per_set.push((built.segments, ledger));
    }
    Ok(RecordResult { split, per_set })
}

pub fn feature_path(cfg: &PipelineConfig, split: Split, set: FeatureSet) -> PathBuf {
    cfg.dir("features").join(format!("{}-{}.apnfeat", split.name(), set.tag()))
}

pub fn build_features(cfg: &PipelineConfig) -> Result<FeatureReport> {
    let dir = cfg.dataset_dir.as_deref().context("no dataset directory given")?;
    let ids = ecg_record_ids(dir)?;
    if ids.is_empty() {
        bail!("no WFDB records in {}", dir.display());
    }
    let split_of = DatasetSplit::apnea_ecg();
    let results: Vec<(String, Result<RecordResult>)> = ids
        .par_iter()
        .map(|id| {
            let split = if split_of.is_test_record(id) { Split::Test } else { Split::Train };
            (id.clone(), process_record(cfg, dir, id, split))
        })
        .collect();

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (id, r) in results {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::error!("{id}: {e:#}");
                failures.push(RecordFailure {
                    record_id: id,
                    error: format!("{e:#}"),
                });
            }
        }
    }

    let mut splits = Vec::new();
    for split in [Split::Train, Split::Test] {
        let mine: Vec<&RecordResult> = ok.iter().filter(|r| r.split == split).collect();
        if mine.is_empty() {
            continue;
        }
        for (k, &set) in cfg.feature_sets.iter().enumerate() {
            let segments: Vec<FeatureSegment> = mine.iter().flat_map(|r| r.per_set[k].0.iter().cloned()).collect();
            let ledger: Vec<RecordLedger> = mine.iter().map(|r| r.per_set[k].1.clone()).collect();
            let file = if segments.is_empty() {
                log::warn!("no {} segments for feature set {}", split.name(), set.tag());
                None
            } else {
                let path = feature_path(cfg, split, set);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                write_feature_file(&path, &segments)?;
                Some(path)
            };
            let sum = |f: fn(&RecordLedger) -> usize| ledger.iter().map(f).sum::<usize>();
            let retained = sum(|l| l.retained);
            let retained_apnea = sum(|l| l.retained_apnea);
            let reference = reference_counts(split);
            splits.push(SplitReport {
                split,
                feature_set: set,
                file,
                records: ledger.len(),
                labeled_minutes: sum(|l| l.labeled_minutes),
                retained,
                retained_apnea,
                apnea_fraction: if retained == 0 { 0.0 } else { retained_apnea as f64 / retained as f64 },
                rejected_context: sum(|l| l.rejected_context),
                rejected_beats: sum(|l| l.rejected_beats),
                reference,
                gap: reference.total as i64 - retained as i64,
                ledger,
            });
        }
    }
    Ok(FeatureReport {
        boundary: cfg.boundary,
        splits,
        failures,
    })
}

pub fn render(report: &FeatureReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "boundary policy: {:?}", report.boundary);
    let _ = writeln!(
        out,
        "{:<6} {:<4} {:>7} {:>9} {:>9} {:>15} {:>9} {:>9} | {:>18} {:>7}",
        "split", "set", "records", "labeled", "retained", "SA", "ctx rej", "beat rej", "Apnea-ECG ref", "gap"
    );
    for s in &report.splits {
        let sa = format!("{} ({:.2}%)", s.retained_apnea, 100.0 * s.apnea_fraction);
        let reference = format!(
            "{} ({:.2}%)",
            s.reference.total,
            100.0 * s.reference.apnea_fraction
        );
        let _ = writeln!(
            out,
            "{:<6} {:<4} {:>7} {:>9} {:>9} {:>15} {:>9} {:>9} | {:>18} {:>7}",
            s.split.name(),
            s.feature_set.tag(),
            s.records,
            s.labeled_minutes,
            s.retained,
            sa,
            s.rejected_context,
            s.rejected_beats,
            reference,
            s.gap
        );
    }
    for s in &report.splits {
        let _ = writeln!(out, "\n{} / {} rejections by record:", s.split.name(), s.feature_set.tag());
        for l in s.ledger.iter().filter(|l| l.rejected_context + l.rejected_beats > 0) {
            let _ = writeln!(
                out,
                "  {:<10} labeled {:>4}  retained {:>4}  context {:>3}  beats {:>3}",
                l.record_id, l.labeled_minutes, l.retained, l.rejected_context, l.rejected_beats
            );
        }
    }
    if !report.failures.is_empty() {
        let _ = writeln!(out, "\nfailed records:");
        for f in &report.failures {
            let _ = writeln!(out, "  {}: {}", f.record_id, f.error);
        }
    }
    out
}

pub fn cmd_features(cfg: &PipelineConfig) -> Result<Outcome> {
    let report = build_features(cfg)?;
    let text = render(&report);
    print!("{text}");
    let reports = cfg.dir("reports");
    write_file(&reports.join("features.txt"), text.as_bytes())?;
    write_json(&reports.join("features.json"), &report)?;
    Ok(if report.failures.is_empty() {
        Outcome::Success
    } else {
        Outcome::Partial
    })
}
