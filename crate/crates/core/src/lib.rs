//! Single-lead ECG sleep apnea detection.
//!
//! The processing chain is
//!
//! ```text
//! WFDB record -> FIR band-pass (zero phase) -> R peaks -> RR correction -> S peaks
//!             -> 5-minute windows -> RR / R-amp / SS / S-amp channels
//!             -> natural cubic spline to 900 points -> z-score -> SE-block 1D CNN
//! ```
//!
//! Each stage lives in its own module and is a pure function of its inputs, so
//! records can be processed in parallel and every stage can be tested on its own.

pub mod feature_extract;
pub mod metrics_eval;
pub mod peak_detect;
pub mod pipeline;
pub mod se_cnn;
pub mod signal_filter;
pub mod synth_oracle;
pub mod wfdb_io;

pub use feature_extract::{FeatureSegment, FeatureSet};
pub use metrics_eval::{ConfusionCounts, MetricsReport};
pub use peak_detect::{BeatSeries, RrBounds};
pub use wfdb_io::{EcgRecord, Label};
