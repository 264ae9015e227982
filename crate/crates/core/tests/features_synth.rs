mod common;

use apnea_core::feature_extract::{
    build_dataset, interpolate_to_900, BoundaryPolicy, FeatureSet, NaturalSpline, SEGMENT_POINTS,
};
use apnea_core::pipeline::BeatPipeline;
use apnea_core::synth_oracle::{generate_labeled_pair, separable_specs, SynthSpec};
use apnea_core::wfdb_io::{feature_file_bytes, load_record, write_record};
use apnea_core::Label;

#[test]
fn centre_minute_r_amplitude_separates_classes() {
    let segs = common::separable_segments(2, 40, FeatureSet::RAndS, 7);
    // Grid points inside the labelled minute (120 s to 180 s of the window).
    let centre = 360..540;
    let (mut sa, mut non) = (Vec::new(), Vec::new());
    for s in &segs {
        let r_amp = s.denormalized(1);
        let m = r_amp[centre.clone()].iter().sum::<f64>() / centre.len() as f64;
        if s.label == Label::Apnea { sa.push(m) } else { non.push(m) }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    let (ms, mn) = (mean(&sa), mean(&non));
    let pooled = (0.5 * (var(&sa, ms) + var(&non, mn))).sqrt();
    assert!(ms < mn);
    assert!((mn - ms) > 3.0 * pooled, "sa {ms} non {mn} pooled std {pooled}");
}

#[test]
fn r_only_is_prefix_of_r_and_s() {
    let r = common::separable_segments(1, 12, FeatureSet::ROnly, 8);
    let rs = common::separable_segments(1, 12, FeatureSet::RAndS, 8);
    assert_eq!(r.len(), rs.len());
    for (a, b) in r.iter().zip(&rs) {
        assert_eq!(*a, b.truncated(2));
        assert!(b.channels.iter().all(|c| c.len() == SEGMENT_POINTS));
    }
}

#[test]
fn wfdb_round_trip_gives_identical_feature_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (sa, non) = separable_specs(4);
    let (rec, _) = generate_labeled_pair(&sa, &non, 12).unwrap();
    write_record(dir.path(), &rec, 16, 1000.0).unwrap();
    let loaded = load_record(dir.path(), rec.record_id()).unwrap();
    assert_eq!(loaded.labels(), rec.labels());
    let run = |r: &apnea_core::EcgRecord| {
        let beats = BeatPipeline::default().extract_beats(r).unwrap().beats;
        let build = build_dataset(std::slice::from_ref(r), &[beats], FeatureSet::RAndS, BoundaryPolicy::Drop).unwrap();
        feature_file_bytes(&build.segments).unwrap()
    };
    let a = run(&loaded);
    assert_eq!(a, run(&load_record(dir.path(), rec.record_id()).unwrap()));
    assert_eq!(build_count(&a), 8);
}

fn build_count(bytes: &[u8]) -> usize {
    apnea_core::wfdb_io::read_feature_file_bytes(bytes).unwrap().len()
}

#[test]
fn emitted_channels_are_standardised() {
    for s in common::separable_segments(1, 10, FeatureSet::RAndS, 9) {
        for c in &s.channels {
            let n = c.len() as f64;
            let m = c.iter().sum::<f64>() / n;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            assert!(m.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn spline_reproduces_cubic_in_interior() {
    let cubic = |x: f64| 0.3 - 1.1 * x + 0.02 * x * x + 0.0004 * x * x * x;
    let knots: Vec<(f64, f64)> = (0..=300).map(|i| (i as f64, cubic(i as f64))).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = knots.iter().copied().unzip();
    let s = NaturalSpline::new(&x, &y).unwrap();
    for j in 0..=2400 {
        let t = 30.0 + 240.0 * j as f64 / 2400.0;
        let want = cubic(t);
        assert!((s.eval(t) - want).abs() <= 1e-8 * want.abs().max(1.0), "t={t}");
    }
    assert_eq!(interpolate_to_900(&knots).unwrap().len(), 900);
}

#[test]
fn clean_record_without_labels_builds_nothing() {
    let (rec, beats) = apnea_core::synth_oracle::generate(&SynthSpec::default()).unwrap();
    let b = build_dataset(&[rec], &[beats], FeatureSet::ROnly, BoundaryPolicy::Drop).unwrap();
    assert!(b.segments.is_empty());
    assert_eq!(b.ledger[0].labeled_minutes, 0);
}
