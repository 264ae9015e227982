//! Acceptance gate: one PASS / FAIL / SKIP line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use apnea_core::feature_extract::{build_dataset, interpolate_to_900, moments, BoundaryPolicy, FeatureSet, NaturalSpline};
use apnea_core::metrics_eval::{compute_metrics, ConfusionCounts};
use apnea_core::peak_detect::{correct_rr, detect_s_peaks, evaluate_peak_detection, CorrectionStatus, RrBounds};
use apnea_core::pipeline::BeatPipeline;
use apnea_core::se_cnn::{cross_entropy, forward, loss_and_grad, train, BnMode, ModelConfig, SeCnn, TrainConfig};
use apnea_core::signal_filter::{design_bandpass, filter_zero_phase, magnitude_response, FirSpec};
use apnea_core::synth_oracle::{generate, generate_labeled_pair, separable_specs, HeartRate, SynthSpec};
use apnea_core::EcgRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    match (v, limit) {
        (Verdict::Pass(d), Some(l)) if took > l => Verdict::Fail(format!("{d}; took {took:.1?}, limit {l:?}")),
        (Verdict::Pass(d), _) => Verdict::Pass(format!("{d} [{took:.1?}]")),
        (other, _) => other,
    }
}

fn apnea_bin() -> &'static str {
    env!("CARGO_BIN_EXE_apnea")
}

// Peak detection on synthetic ECG against its ground truth.
fn c1_peaks() -> Verdict {
    let pipeline = BeatPipeline::default();
    let score = |bpm: f64, snr: Option<f64>, seed: u64| {
        let spec = SynthSpec {
            duration_s: 200.0 * 60.0 / bpm,
            heart_rate: HeartRate::Constant(bpm),
            noise_snr_db: snr,
            seed,
            ..SynthSpec::default()
        };
        let (rec, truth) = generate(&spec).unwrap();
        assert_eq!(truth.len(), 200);
        let found = pipeline.extract_beats(&rec).unwrap().beats;
        let r = compute_metrics(&evaluate_peak_detection(&found.r_idx, &truth.r_idx, 40.0, rec.fs()));
        let s = compute_metrics(&evaluate_peak_detection(&found.s_idx, &truth.s_idx, 40.0, rec.fs()));
        (r, s)
    };
    let mut worst = (1.0f64, 1.0f64);
    for bpm in [50.0, 72.0, 100.0] {
        for seed in 0..3 {
            let (r, s) = score(bpm, Some(10.0), seed);
            worst = (worst.0.min(r.f1_sa), worst.1.min(s.f1_sa));
        }
    }
    let (cr, cs) = score(72.0, None, 0);
    let clean = cr.counts.tp == 200 && cs.counts.tp == 200 && cr.counts.fp == 0 && cs.counts.fp == 0;
    verdict(
        worst.0 >= 0.9899 && worst.1 >= 0.9899 && clean,
        format!(
            "min F1 at 10 dB over 9 runs: R {:.2}%, S {:.2}%; clean matched R {}/200, S {}/200",
            100.0 * worst.0,
            100.0 * worst.1,
            cr.counts.tp,
            cs.counts.tp
        ),
    )
}

/// Literal transcription of the S-peak walk, guarded against reading past the end.
fn s_peaks_reference(data_ecg: &[f64], r_peaks: &[usize]) -> Vec<usize> {
    let mut s_peaks = Vec::new();
    'outer: for &i in r_peaks {
        let mut cnt = i;
        if cnt + 1 >= data_ecg.len() {
            break;
        }
        while data_ecg[cnt] > data_ecg[cnt + 1] {
            cnt += 1;
            if cnt + 1 >= data_ecg.len() {
                break 'outer;
            }
        }
        s_peaks.push(cnt);
    }
    s_peaks
}

fn c2_s_peaks() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=500);
        let signal: Vec<f64> = (0..n).map(|_| rng.gen_range(-4i32..=4) as f64).collect();
        let k = rng.gen_range(0..=n.min(40));
        let mut r: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
        r.sort_unstable();
        if detect_s_peaks(&signal, &r) != s_peaks_reference(&signal, &r) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} mismatches in 1000 random cases"))
}

fn c3_filter() -> Verdict {
    let taps = design_bandpass(&FirSpec::qrs_band(100.0)).unwrap();
    let mid = magnitude_response(&taps, 10.0, 100.0);
    let low = magnitude_response(&taps, 0.5, 100.0);
    let high = magnitude_response(&taps, 49.0, 100.0);
    let x: Vec<f64> = (0..2000)
        .map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / 100.0).sin())
        .collect();
    let y = filter_zero_phase(&x, &taps).unwrap();
    // Lag maximising the interior cross-correlation, refined by a parabola.
    let xc = |lag: i64| -> f64 {
        (300..1700).map(|i| x[i] * y[(i as i64 + lag) as usize]).sum()
    };
    let (c_m, c_0, c_p) = (xc(-1), xc(0), xc(1));
    let best = (-5..=5).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
    let frac = 0.5 * (c_m - c_p) / (c_m - 2.0 * c_0 + c_p);
    let shift = if best == 0 { frac.abs() } else { best.abs() as f64 };
    verdict(
        (0.9..=1.1).contains(&mid) && low < 0.01 && high < 0.01 && shift < 1.0,
        format!("|H(10)| {mid:.4}, |H(0.5)| {low:.2e}, |H(49)| {high:.2e}, 10 Hz shift {shift:.3} samples"),
    )
}

fn peaks_from_rr(rr: &[f64], fs: f64) -> Vec<usize> {
    let mut r = vec![100usize];
    for d in rr {
        r.push(r.last().unwrap() + (d * fs).round() as usize);
    }
    r
}

fn c4_rr() -> Verdict {
    let fs = 100u32;
    let bounds = RrBounds::default();
    let in_bounds = |r: &[usize]| {
        r.windows(2).all(|w| {
            let s = (w[1] - w[0]) as f64 / fs as f64;
            s >= bounds.rr_min && s <= bounds.rr_max
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut corrected, mut violations) = (0, 0);
    for _ in 0..10_000 {
        let n = rng.gen_range(0..60);
        let mut r = vec![rng.gen_range(0..500usize)];
        for _ in 0..n {
            let d = match rng.gen_range(0..10) {
                0 => rng.gen_range(5..30),
                1 => rng.gen_range(201..480),
                _ => rng.gen_range(60..=120),
            };
            r.push(r.last().unwrap() + d);
        }
        let out = correct_rr(&r, fs, &bounds).unwrap();
        let ok = match out.status {
            CorrectionStatus::Corrected => {
                corrected += 1;
                let again = correct_rr(&out.r_idx, fs, &bounds).unwrap();
                in_bounds(&out.r_idx) && again.r_idx == out.r_idx && again.status != CorrectionStatus::Unfixable
            }
            CorrectionStatus::TooFewPeaks => out.r_idx == r,
            CorrectionStatus::Unfixable => out.dropped > 0,
        };
        if !ok {
            violations += 1;
        }
    }
    let merge = correct_rr(
        &peaks_from_rr(&[0.8, 0.8, 0.1, 0.7, 0.8], 100.0),
        fs,
        &RrBounds::new(0.3, 2.0, 5).unwrap(),
    )
    .unwrap();
    let merge_ok = merge.r_idx == peaks_from_rr(&[0.8, 0.8, 0.8, 0.8], 100.0);
    let insert = correct_rr(
        &peaks_from_rr(&[0.8, 1.6, 0.8], 100.0),
        fs,
        &RrBounds::new(0.3, 1.2, 3).unwrap(),
    )
    .unwrap();
    let insert_ok = insert.r_idx == vec![100, 180, 260, 340, 420];
    verdict(
        violations == 0 && merge_ok && insert_ok,
        format!(
            "{violations} violations in 10000 sequences ({corrected} corrected); merge example {}, insert example {}",
            if merge_ok { "ok" } else { "wrong" },
            if insert_ok { "ok" } else { "wrong" }
        ),
    )
}

fn c5_spline() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut lengths_ok = true;
    for _ in 0..20 {
        let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let cubic = |x: f64| c[0] + c[1] * x + c[2] * x * x / 300.0 + c[3] * x * x * x / 90_000.0;
        let mut t = rng.gen_range(0.0..0.5);
        let mut knots = Vec::new();
        while t <= 300.0 {
            knots.push((t, cubic(t)));
            t += rng.gen_range(0.6..1.2);
        }
        let (x, y): (Vec<f64>, Vec<f64>) = knots.iter().copied().unzip();
        let s = NaturalSpline::new(&x, &y).unwrap();
        let (a, b) = (x[0], *x.last().unwrap());
        let (lo, hi) = (a + 0.1 * (b - a), b - 0.1 * (b - a));
        for j in 0..=2000 {
            let t = lo + (hi - lo) * j as f64 / 2000.0;
            let want = cubic(t);
            worst = worst.max((s.eval(t) - want).abs() / want.abs().max(1.0));
        }
        lengths_ok &= interpolate_to_900(&knots).unwrap().len() == 900;
    }
    verdict(
        worst <= 1e-8 && lengths_ok,
        format!("worst interior relative error {worst:.2e} over 20 cubics; output length 900"),
    )
}

fn synth_records(n: usize, minutes: usize, seed: u64) -> (Vec<EcgRecord>, Vec<apnea_core::BeatSeries>) {
    let mut records = Vec::new();
    let mut beats = Vec::new();
    for i in 0..n {
        let (sa, non) = separable_specs(seed * 100 + i as u64);
        let (rec, _) = generate_labeled_pair(&sa, &non, minutes).unwrap();
        let rec = EcgRecord::new(format!("acc{i}"), rec.fs(), rec.samples().to_vec(), rec.labels().to_vec()).unwrap();
        beats.push(BeatPipeline::default().extract_beats(&rec).unwrap().beats);
        records.push(rec);
    }
    (records, beats)
}

fn c6_normalization() -> Verdict {
    let (records, beats) = synth_records(3, 14, 6);
    let segs = build_dataset(&records, &beats, FeatureSet::RAndS, BoundaryPolicy::Drop).unwrap().segments;
    let (mut checked, mut worst) = (0, 0.0f64);
    for s in &segs {
        for (c, ch) in s.channels.iter().enumerate() {
            if s.channel_std[c] == 0.0 {
                continue;
            }
            let (m, sd) = moments(ch);
            worst = worst.max(m.abs()).max((sd - 1.0).abs());
            checked += 1;
        }
    }
    verdict(
        checked > 0 && worst <= 1e-6,
        format!("{checked} channels in {} segments, worst deviation {worst:.2e}", segs.len()),
    )
}

fn c7_metrics() -> Verdict {
    let table = compute_metrics(&ConfusionCounts {
        tp: 196,
        tn: 0,
        fp: 0,
        fn_: 4,
    });
    let row_ok = table.sensitivity == 0.98 && (100.0 * table.f1_sa * 100.0).round() / 100.0 == 98.99;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let mut v: [u64; 4] = std::array::from_fn(|_| rng.gen_range(0..1000));
        if rng.gen_bool(0.05) {
            v[rng.gen_range(0..4)] = 0;
        }
        let [tp, tn, fp, fn_] = v;
        let m = compute_metrics(&ConfusionCounts { tp, tn, fp, fn_ });
        let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let oracle = [
            div(tp + tn, tp + tn + fp + fn_),
            div(tp, tp + fn_),
            div(tn, tn + fp),
            div(2 * tp, 2 * tp + fp + fn_),
            div(2 * tn, 2 * tn + fp + fn_),
        ];
        let got = [m.accuracy, m.sensitivity, m.specificity, m.f1_sa, m.f1_non_sa];
        for (a, b) in got.iter().zip(oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        row_ok && worst <= 1e-12,
        format!(
            "196/0/0/4 gives {:.2}% / {:.2}%; worst oracle difference {worst:.1e} over 10000 counts",
            100.0 * table.sensitivity,
            100.0 * table.f1_sa
        ),
    )
}

fn c8_gradcheck() -> Verdict {
    let c = ModelConfig {
        in_channels: 4,
        n_blocks: 2,
        width: 8,
        cardinality: 4,
        se_reduction: 4,
        n_classes: 2,
    };
    let m = SeCnn::new(c, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let p: Vec<f64> = m.params.iter().map(|&v| v as f64 + rng.gen_range(-0.05..0.05)).collect();
    let len = 120;
    let x: Vec<f64> = (0..2 * 4 * len).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let labels = [0usize, 1];
    let (_, grad, _) = loss_and_grad(&c, &p, &x, len, &labels).unwrap();
    let loss = |q: &[f64]| cross_entropy(&forward(&c, q, &x, 2, len, BnMode::Batch, false).unwrap().probs, &labels, 2);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut q = p.clone();
    for i in 0..p.len() {
        q[i] = p[i] + h;
        let lp = loss(&q);
        q[i] = p[i] - h;
        let lm = loss(&q);
        q[i] = p[i];
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    let n_params = p.len();

    let (records, beats) = synth_records(2, 36, 1);
    let segs = build_dataset(&records, &beats, FeatureSet::RAndS, BoundaryPolicy::Drop).unwrap().segments;
    let tc = TrainConfig {
        batch_size: 16,
        epochs: 200,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(ModelConfig::new(4), &tc, &segs, &segs).unwrap();
    let pred = out.best.model.predict(&segs, 0.5).unwrap();
    let hits = pred.iter().zip(&segs).filter(|(p, s)| **p == s.label).count();
    let acc = hits as f64 / segs.len() as f64;
    verdict(
        worst < 1e-4 && segs.len() == 64 && acc >= 0.99,
        format!(
            "gradcheck worst relative error {worst:.1e} over {n_params} params; overfit accuracy {:.2}% on {} segments (best epoch {})",
            100.0 * acc,
            segs.len(),
            out.best.meta.epoch
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(apnea_bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "`apnea {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn accuracy_from(path: &Path) -> f64 {
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v["accuracy"].as_f64().unwrap()
}

fn c9_end_to_end() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    let data = out.join("synth");
    let steps: Vec<Vec<&str>> = vec![
        vec!["--output-dir", out_s, "synth", "--train-records", "8", "--test-records", "4", "--minutes", "40"],
        vec!["--output-dir", out_s, "features", data.to_str().unwrap()],
        vec!["--output-dir", out_s, "train", "--feature-set", "r", "--epochs", "30", "--batch-size", "32"],
        vec!["--output-dir", out_s, "train", "--feature-set", "rs", "--epochs", "30", "--batch-size", "32"],
        vec!["--output-dir", out_s, "eval", "--feature-set", "r"],
        vec!["--output-dir", out_s, "eval", "--feature-set", "rs"],
    ];
    for args in &steps {
        if let Err(e) = run_cli(args) {
            return Verdict::Fail(e);
        }
    }
    let acc_r = accuracy_from(&out.join("reports/eval-r.json"));
    let acc_rs = accuracy_from(&out.join("reports/eval-rs.json"));
    verdict(
        acc_rs >= 0.95 && acc_rs >= acc_r,
        format!(
            "480 labelled minutes; test accuracy R+S {:.2}%, R-only {:.2}%",
            100.0 * acc_rs,
            100.0 * acc_r
        ),
    )
}

fn c10_dataset() -> Verdict {
    let Some(dir) = std::env::var_os("APNEA_ECG_DIR") else {
        return Verdict::Skip("set APNEA_ECG_DIR to a downloaded Apnea-ECG directory to run".into());
    };
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap().to_string();
    let dir = dir.to_string_lossy().into_owned();
    let inventory = out.clone() + "/inventory.json";
    if let Err(e) = run_cli(&["ingest", &dir, "--json", &inventory]) {
        return Verdict::Fail(e);
    }
    let inv: serde_json::Value = serde_json::from_slice(&std::fs::read(&inventory).unwrap()).unwrap();
    let n_records = inv.as_array().map_or(0, Vec::len);
    if let Err(e) = run_cli(&["--output-dir", &out, "features", &dir, "--feature-set", "r"]) {
        return Verdict::Fail(e);
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(format!("{out}/reports/features.json")).unwrap()).unwrap();
    let Some(train) = report["splits"].as_array().and_then(|s| s.iter().find(|s| s["split"] == "train")) else {
        return Verdict::Fail("no training split in the reconciliation report".into());
    };
    let retained = train["retained"].as_u64().unwrap();
    let context = train["rejected_context"].as_u64().unwrap();
    let fraction = train["apnea_fraction"].as_f64().unwrap();
    verdict(
        n_records == 70 && retained + context == 16_709 && (fraction - 0.3874).abs() <= 0.01,
        format!(
            "{n_records} records; retained {retained} + boundary rejections {context} = {} (reference 16709); SA fraction {:.2}%",
            retained + context,
            100.0 * fraction
        ),
    )
}

type Criterion = (u8, &'static str, Option<Duration>, fn() -> Verdict);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "peak detection on synthetic ECG", Some(Duration::from_secs(5)), c1_peaks),
        (2, "S-peak walk equals literal transcription", Some(Duration::from_secs(10)), c2_s_peaks),
        (3, "band-pass response and zero phase", None, c3_filter),
        (4, "RR correction properties and worked examples", None, c4_rr),
        (5, "spline reproduces cubics, 900 points", None, c5_spline),
        (6, "channel normalisation", None, c6_normalization),
        (7, "metrics reference row and oracle", None, c7_metrics),
        (8, "gradient check and overfit", Some(Duration::from_secs(120)), c8_gradcheck),
        (9, "end-to-end synthetic pipeline", None, c9_end_to_end),
        (10, "Apnea-ECG reconciliation", None, c10_dataset),
    ];
    let mut failed = 0;
    for (n, name, limit, f) in criteria {
        let v = catch_unwind(AssertUnwindSafe(|| timed(limit, f)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Verdict::Fail(format!("panicked: {msg}"))
            });
        match v {
            Verdict::Pass(d) => println!("PASS criterion {n}: {name}: {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                println!("FAIL criterion {n}: {name}: {d}");
            }
            Verdict::Skip(d) => println!("SKIP criterion {n}: {name}: {d}"),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
