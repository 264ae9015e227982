//! PhysioNet WFDB ingestion and on-disk containers.
//!
//! Only what the Apnea-ECG database needs is supported: single-file records in
//! format 212 or 16, MIT-format annotation streams carrying one `A`/`N` marker
//! per minute, plus the binary containers this crate uses to persist beats and
//! feature segments.

mod annotation;
mod container;
mod header;
mod signal;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use annotation::{
    apnea_annotation_bytes, encode_annotations, parse_annotations, parse_apnea_annotations,
    Annotation, ANNOT_APNEA, ANNOT_NORMAL,
};
pub use container::{
    read_beat_file, read_feature_file, read_feature_file_bytes, write_beat_file,
    write_feature_csv, write_feature_file, beat_file_bytes, feature_file_bytes,
    BEAT_MAGIC, FEATURE_FORMAT_VERSION, FEATURE_MAGIC,
};
pub(crate) use container::{Reader, Writer};
pub use header::{format_header, parse_header, HeaderInfo, SignalInfo};
pub use signal::{decode_counts, decode_samples, decode_signals, encode_counts, wfdb_checksum};

#[derive(Debug, Error)]
pub enum WfdbError {
    #[error("malformed header line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("unsupported WFDB signal format {0} (supported: 16, 212)")]
    UnsupportedFormat(u16),
    #[error("truncated signal payload: {0}")]
    Truncated(String),
    #[error("payload length does not match header: expected {expected} samples, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("sample {value} out of range for format {format}")]
    SampleOutOfRange { value: i32, format: u16 },
    #[error("signal checksum mismatch for {signal}: header {expected}, data {found}")]
    SignalChecksum { signal: String, expected: i32, found: i32 },
    #[error("annotation stream truncated at byte {0}")]
    TruncatedAnnotations(usize),
    #[error("annotation timestamps not increasing at annotation {index} (t = {time})")]
    NonMonotonic { index: usize, time: i64 },
    #[error("unknown apnea annotation code {code} at sample {time}")]
    UnknownSymbol { code: u8, time: i64 },
    #[error("invalid record {record}: {reason}")]
    InvalidRecord { record: String, reason: String },
    #[error("bad magic bytes, not a {0} file")]
    BadMagic(&'static str),
    #[error("container version {found} not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("container checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("segments do not share one channel layout")]
    LayoutMismatch,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, WfdbError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WfdbError + '_ {
    move |source| WfdbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-minute apnea annotation. SA is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonApnea = 0,
    Apnea = 1,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Label::NonApnea),
            1 => Some(Label::Apnea),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn is_apnea(self) -> bool {
        self == Label::Apnea
    }
}

/// A single-lead recording in physical units (mV) with its per-minute labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    record_id: String,
    fs: u32,
    samples: Vec<f64>,
    labels: Vec<Label>,
}

impl EcgRecord {
    /// Every label index `i` must start inside the signal: `i * 60 * fs < samples.len()`.
    pub fn new(
        record_id: impl Into<String>,
        fs: u32,
        samples: Vec<f64>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        let record_id = record_id.into();
        if fs == 0 {
            return Err(WfdbError::InvalidRecord {
                record: record_id,
                reason: "sampling rate must be positive".into(),
            });
        }
        let per_minute = fs as usize * 60;
        if let Some(last) = labels.len().checked_sub(1) {
            if last * per_minute >= samples.len() {
                return Err(WfdbError::InvalidRecord {
                    record: record_id,
                    reason: format!(
                        "label for minute {last} starts beyond the {} available samples",
                        samples.len()
                    ),
                });
            }
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(WfdbError::InvalidRecord {
                record: record_id,
                reason: format!("non-finite sample at index {i}"),
            });
        }
        Ok(Self {
            record_id,
            fs,
            samples,
            labels,
        })
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn fs(&self) -> u32 {
        self.fs
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn n_labeled_minutes(&self) -> usize {
        self.labels.len()
    }

    pub fn samples_per_minute(&self) -> usize {
        self.fs as usize * 60
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs as f64
    }
}

/// The Apnea-ECG release: 35 learning-set records and 35 withheld test records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_records: Vec<String>,
    pub test_records: Vec<String>,
}

impl DatasetSplit {
    pub fn apnea_ecg() -> Self {
        let mut train = Vec::with_capacity(35);
        train.extend((1..=20).map(|i| format!("a{i:02}")));
        train.extend((1..=5).map(|i| format!("b{i:02}")));
        train.extend((1..=10).map(|i| format!("c{i:02}")));
        let test = (1..=35).map(|i| format!("x{i:02}")).collect();
        Self {
            train_records: train,
            test_records: test,
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.train_records
            .iter()
            .all(|r| !self.test_records.contains(r))
    }

    /// Apnea-ECG names are matched exactly; any other record falls back to the
    /// withheld-set naming convention (`x` prefix means test).
    pub fn is_test_record(&self, record_id: &str) -> bool {
        if self.test_records.iter().any(|r| r == record_id) {
            return true;
        }
        if self.train_records.iter().any(|r| r == record_id) {
            return false;
        }
        record_id.starts_with('x')
    }
}

/// Reads `<dir>/<record>.hea`, its signal file and, when present, `<record>.apn`.
pub fn load_record(dir: &Path, record_id: &str) -> Result<EcgRecord> {
    let hea_path = dir.join(format!("{record_id}.hea"));
    let hea = fs::read(&hea_path).map_err(io_err(&hea_path))?;
    let header = parse_header(&hea)?;
    let first = header.signals.first().ok_or_else(|| WfdbError::InvalidRecord {
        record: record_id.to_string(),
        reason: "header declares no signals".into(),
    })?;
    let dat_path = dir.join(&first.file_name);
    let dat = fs::read(&dat_path).map_err(io_err(&dat_path))?;
    let samples = decode_samples(&dat, &header)?;

    let apn_path = dir.join(format!("{record_id}.apn"));
    let mut labels = if apn_path.exists() {
        let apn = fs::read(&apn_path).map_err(io_err(&apn_path))?;
        parse_apnea_annotations(&apn)?
    } else {
        Vec::new()
    };
    // Minutes that start past the end of the signal carry no data.
    let per_minute = header.fs as usize * 60;
    let usable = samples.len().div_ceil(per_minute);
    if labels.len() > usable {
        log::warn!(
            "{record_id}: dropping {} labels past the end of the signal",
            labels.len() - usable
        );
        labels.truncate(usable);
    }
    EcgRecord::new(record_id, header.fs, samples, labels)
}

/// Record ids of every `.hea` file in `dir`, sorted.
pub fn list_records(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("hea") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Writes a single-signal record (`.hea`, `.dat`, and `.apn` when labels exist).
/// Physical values are quantised with `gain` counts per mV.
pub fn write_record(dir: &Path, record: &EcgRecord, format: u16, gain: f64) -> Result<HeaderInfo> {
    let counts: Vec<i32> = record
        .samples()
        .iter()
        .map(|v| (v * gain).round() as i32)
        .collect();
    let dat = encode_counts(&counts, format)?;
    let file_name = format!("{}.dat", record.record_id());
    let header = HeaderInfo {
        record_name: record.record_id().to_string(),
        fs: record.fs(),
        n_samples: Some(counts.len()),
        signals: vec![SignalInfo {
            file_name: file_name.clone(),
            format,
            gain,
            baseline: 0,
            units: "mV".into(),
            adc_resolution: if format == 212 { 12 } else { 16 },
            adc_zero: 0,
            initial_value: counts.first().copied().unwrap_or(0),
            checksum: Some(wfdb_checksum(&counts)),
            block_size: 0,
            description: "ECG".into(),
        }],
    };
    write_atomic(&dir.join(format!("{}.hea", record.record_id())), format_header(&header).as_bytes())?;
    write_atomic(&dir.join(file_name), &dat)?;
    if !record.labels().is_empty() {
        let apn = apnea_annotation_bytes(record.labels(), record.fs());
        write_atomic(&dir.join(format!("{}.apn", record.record_id())), &apn)?;
    }
    Ok(header)
}

/// Write to a sibling temp file, then rename over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_complete() {
        let split = DatasetSplit::apnea_ecg();
        assert!(split.is_disjoint());
        assert_eq!(split.train_records.len() + split.test_records.len(), 70);
        assert!(split.is_test_record("x07"));
        assert!(!split.is_test_record("c10"));
        assert!(split.is_test_record("xsynth"));
    }

    #[test]
    fn record_rejects_labels_past_signal() {
        let samples = vec![0.0; 100 * 60 * 2];
        assert!(EcgRecord::new("r", 100, samples.clone(), vec![Label::Apnea; 2]).is_ok());
        assert!(EcgRecord::new("r", 100, samples, vec![Label::Apnea; 3]).is_err());
        assert!(EcgRecord::new("r", 0, vec![], vec![]).is_err());
    }

    #[test]
    fn record_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<f64> = (0..6000 * 3).map(|i| ((i % 37) as f64 - 18.0) / 200.0).collect();
        let labels = vec![Label::NonApnea, Label::Apnea, Label::Apnea];
        let rec = EcgRecord::new("t01", 100, samples, labels).unwrap();
        for fmt in [16, 212] {
            write_record(dir.path(), &rec, fmt, 200.0).unwrap();
            let back = load_record(dir.path(), "t01").unwrap();
            assert_eq!(back, rec, "format {fmt}");
        }
        assert_eq!(list_records(dir.path()).unwrap(), vec!["t01".to_string()]);
    }
}
