use std::path::Path;

use anyhow::{Context, Result};
use apnea_core::wfdb_io::{list_records, load_record, DatasetSplit};
use serde::Serialize;

use crate::Outcome;

#[derive(Debug, Clone, Serialize)]
pub struct RecordEntry {
    pub record_id: String,
    pub split: &'static str,
    pub fs: Option<u32>,
    pub duration_s: Option<f64>,
    pub labeled_minutes: Option<usize>,
    pub apnea_minutes: Option<usize>,
    pub error: Option<String>,
}

/// ECG record ids in `dir`, leaving out respiration companions such as
/// `a01r` / `a01er` that sit next to `a01`.
pub fn ecg_record_ids(dir: &Path) -> Result<Vec<String>> {
    let all = list_records(dir).with_context(|| format!("listing {}", dir.display()))?;
    let companion = |id: &str| {
        ["er", "r"].iter().any(|suffix| {
            id.strip_suffix(suffix)
                .is_some_and(|base| !base.is_empty() && all.iter().any(|o| o == base))
        })
    };
    Ok(all.iter().filter(|id| !companion(id)).cloned().collect())
}

pub fn inventory(dir: &Path) -> Result<Vec<RecordEntry>> {
    let split = DatasetSplit::apnea_ecg();
    let ids = ecg_record_ids(dir)?;
    Ok(ids
        .into_iter()
        .map(|id| {
            let split_name = if split.is_test_record(&id) { "test" } else { "train" };
            match load_record(dir, &id) {
                Ok(rec) => RecordEntry {
                    split: split_name,
                    fs: Some(rec.fs()),
                    duration_s: Some(rec.duration_s()),
                    labeled_minutes: Some(rec.n_labeled_minutes()),
                    apnea_minutes: Some(rec.labels().iter().filter(|l| l.is_apnea()).count()),
                    error: None,
                    record_id: id,
                },
                Err(e) => RecordEntry {
                    split: split_name,
                    fs: None,
                    duration_s: None,
                    labeled_minutes: None,
                    apnea_minutes: None,
                    error: Some(e.to_string()),
                    record_id: id,
                },
            }
        })
        .collect())
}

pub fn render(entries: &[RecordEntry]) -> String {
    let mut out = format!(
        "{:<10} {:<6} {:>5} {:>10} {:>8} {:>7}  status\n",
        "record", "split", "fs", "duration", "minutes", "apnea"
    );
    for e in entries {
        match &e.error {
            None => out.push_str(&format!(
                "{:<10} {:<6} {:>5} {:>9.1}m {:>8} {:>7}  ok\n",
                e.record_id,
                e.split,
                e.fs.unwrap_or(0),
                e.duration_s.unwrap_or(0.0) / 60.0,
                e.labeled_minutes.unwrap_or(0),
                e.apnea_minutes.unwrap_or(0),
            )),
            Some(err) => out.push_str(&format!(
                "{:<10} {:<6} {:>5} {:>10} {:>8} {:>7}  FAILED: {err}\n",
                e.record_id, e.split, "-", "-", "-", "-"
            )),
        }
    }
    let failed = entries.iter().filter(|e| e.error.is_some()).count();
    out.push_str(&format!("{} records, {} failed\n", entries.len(), failed));
    out
}

pub fn cmd_ingest(dir: &Path, json: Option<&Path>) -> Result<Outcome> {
    let entries = inventory(dir)?;
    print!("{}", render(&entries));
    if let Some(path) = json {
        crate::artifacts::write_json(path, &entries)?;
    }
    Ok(if entries.iter().any(|e| e.error.is_some()) {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}
