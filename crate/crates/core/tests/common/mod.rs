#![allow(dead_code)]

use apnea_core::feature_extract::{build_dataset, BoundaryPolicy, FeatureSegment, FeatureSet};
use apnea_core::pipeline::BeatPipeline;
use apnea_core::synth_oracle::{generate_labeled_pair, separable_specs};
use apnea_core::EcgRecord;

/// Separable synthetic records run through the full beat and feature pipeline.
pub fn separable_segments(n_records: usize, minutes: usize, set: FeatureSet, seed: u64) -> Vec<FeatureSegment> {
    let mut records: Vec<EcgRecord> = Vec::new();
    let mut beats = Vec::new();
    for i in 0..n_records {
        let (sa, non) = separable_specs(seed * 1000 + i as u64);
        let (rec, _) = generate_labeled_pair(&sa, &non, minutes).unwrap();
        let rec = EcgRecord::new(format!("s{seed}r{i:02}"), rec.fs(), rec.samples().to_vec(), rec.labels().to_vec()).unwrap();
        beats.push(BeatPipeline::default().extract_beats(&rec).unwrap().beats);
        records.push(rec);
    }
    build_dataset(&records, &beats, set, BoundaryPolicy::Drop).unwrap().segments
}
