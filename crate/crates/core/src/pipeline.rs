//! Record-level beat extraction: band-pass, R detection, RR correction, S search.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::peak_detect::{self, BeatSeries, CorrectionStatus, HamiltonConfig, PeakError, RrBounds};
use crate::signal_filter::{self, FilterError, FirSpec};
use crate::wfdb_io::EcgRecord;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("record {record}: filter: {source}")]
    Filter { record: String, source: FilterError },
    #[error("record {record}: peaks: {source}")]
    Peaks { record: String, source: PeakError },
}

/// Signal the R and S amplitudes are read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmplitudeSource {
    #[default]
    Filtered,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeatPipeline {
    pub band: (f64, f64),
    /// Snap each detected R to the raw-signal maximum within this many seconds.
    pub raw_refine_s: Option<f64>,
    pub filter_order: usize,
    pub hamilton: HamiltonConfig,
    pub rr_bounds: RrBounds,
    pub correct_rr: bool,
    pub amplitude: AmplitudeSource,
}

impl Default for BeatPipeline {
    fn default() -> Self {
        Self {
            band: FirSpec::DEFAULT_BAND,
            raw_refine_s: Some(0.1),
            filter_order: FirSpec::DEFAULT_ORDER,
            hamilton: HamiltonConfig::default(),
            rr_bounds: RrBounds::default(),
            correct_rr: true,
            amplitude: AmplitudeSource::Filtered,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatExtraction {
    pub beats: BeatSeries,
    pub detected_r: usize,
    pub correction: Option<CorrectionStatus>,
    /// R peaks left without an S (walk hit the end or S order broke).
    pub unpaired: usize,
}

impl BeatPipeline {
    pub fn filter_spec(&self, fs: u32) -> Result<FirSpec, FilterError> {
        FirSpec::new(self.band.0, self.band.1, self.filter_order, fs as f64)
    }

    pub fn filtered(&self, record: &EcgRecord) -> Result<Vec<f64>, PipelineError> {
        let wrap = |source| PipelineError::Filter {
            record: record.record_id().to_string(),
            source,
        };
        let taps = signal_filter::design_bandpass(&self.filter_spec(record.fs()).map_err(wrap)?).map_err(wrap)?;
        signal_filter::filter_zero_phase(record.samples(), &taps).map_err(wrap)
    }

    pub fn extract_beats(&self, record: &EcgRecord) -> Result<BeatExtraction, PipelineError> {
        let filtered = self.filtered(record)?;
        let wrap = |source| PipelineError::Peaks {
            record: record.record_id().to_string(),
            source,
        };
        let fs = record.fs();
        let mut detected = peak_detect::detect_r_peaks(&filtered, fs, &self.hamilton).map_err(wrap)?;
        if let Some(reach) = self.raw_refine_s {
            let radius = (reach * fs as f64).round() as usize;
            detected = peak_detect::refine_peaks(record.samples(), &detected, radius);
        }
        let detected_r = detected.len();
        let (r_idx, correction) = if self.correct_rr {
            let c = peak_detect::correct_rr(&detected, fs, &self.rr_bounds).map_err(wrap)?;
            (c.r_idx, Some(c.status))
        } else {
            (detected, None)
        };
        let s_idx = peak_detect::find_s_peaks(&filtered, &r_idx);
        let amp_src: &[f64] = match self.amplitude {
            AmplitudeSource::Filtered => &filtered,
            AmplitudeSource::Raw => record.samples(),
        };
        let beats = pair_beats(fs, &r_idx, &s_idx, amp_src);
        Ok(BeatExtraction {
            unpaired: r_idx.len() - beats.len(),
            beats,
            detected_r,
            correction,
        })
    }
}

/// Keeps beats that have an S peak strictly after the previous kept S.
pub fn pair_beats(fs: u32, r_idx: &[usize], s_idx: &[Option<usize>], amp: &[f64]) -> BeatSeries {
    let mut out = BeatSeries::empty(fs);
    for (&r, s) in r_idx.iter().zip(s_idx) {
        let Some(s) = *s else { continue };
        if out.s_idx.last().is_some_and(|&prev| s <= prev) {
            continue;
        }
        out.r_idx.push(r);
        out.r_amp.push(amp[r]);
        out.s_idx.push(s);
        out.s_amp.push(amp[s]);
    }
    out
}
