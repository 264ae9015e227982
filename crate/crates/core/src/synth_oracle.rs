//! Synthetic ECG with exact beat fiducials: Gaussian R bump followed 40 ms later
//! by a negative Gaussian S bump, optional white noise, RR jitter and baseline wander.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::peak_detect::BeatSeries;
use crate::wfdb_io::{EcgRecord, Label};

pub const R_WIDTH_S: f64 = 0.012;
pub const S_WIDTH_S: f64 = 0.012;
pub const S_LAG_S: f64 = 0.040;
const MIN_BPM: f64 = 20.0;
const MAX_BPM: f64 = 240.0;
const WANDER_HZ: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("sampling rate must be at least 50 Hz, got {0}")]
    InvalidRate(u32),
    #[error("heart rate {0} bpm outside [20, 240]")]
    InvalidHeartRate(f64),
    #[error("duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HeartRate {
    Constant(f64),
    /// Beats per minute for each record minute; the last value is held.
    Profile(Vec<f64>),
}

impl HeartRate {
    pub fn bpm_at_minute(&self, minute: usize) -> f64 {
        match self {
            HeartRate::Constant(b) => *b,
            HeartRate::Profile(p) => p[minute.min(p.len() - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub fs: u32,
    pub duration_s: f64,
    pub heart_rate: HeartRate,
    /// Height of the R bump (mV).
    pub r_amp: f64,
    /// Depth of the S bump (mV, positive).
    pub s_amp: f64,
    /// White-noise level relative to the clean signal power.
    pub noise_snr_db: Option<f64>,
    /// Relative standard deviation of beat-to-beat RR variation.
    pub rr_jitter: f64,
    /// Amplitude of a 0.2 Hz baseline sinusoid (mV).
    pub baseline_wander: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            fs: 100,
            duration_s: 60.0,
            heart_rate: HeartRate::Constant(60.0),
            r_amp: 1.0,
            s_amp: 0.3,
            noise_snr_db: None,
            rr_jitter: 0.0,
            baseline_wander: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.fs < 50 {
            return Err(SynthError::InvalidRate(self.fs));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SynthError::InvalidDuration(self.duration_s));
        }
        let rates: &[f64] = match &self.heart_rate {
            HeartRate::Constant(b) => std::slice::from_ref(b),
            HeartRate::Profile(p) if p.is_empty() => {
                return Err(SynthError::InvalidParameter("empty heart-rate profile".into()))
            }
            HeartRate::Profile(p) => p,
        };
        if let Some(&b) = rates.iter().find(|b| !(MIN_BPM..=MAX_BPM).contains(*b)) {
            return Err(SynthError::InvalidHeartRate(b));
        }
        if !(self.r_amp > 0.0 && self.s_amp >= 0.0 && self.r_amp.is_finite() && self.s_amp.is_finite()) {
            return Err(SynthError::InvalidParameter("amplitudes must be r_amp > 0, s_amp >= 0".into()));
        }
        if !(0.0..0.2).contains(&self.rr_jitter) {
            return Err(SynthError::InvalidParameter(format!("rr_jitter {} outside [0, 0.2)", self.rr_jitter)));
        }
        if !self.baseline_wander.is_finite() || self.noise_snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(SynthError::InvalidParameter("non-finite noise or wander".into()));
        }
        Ok(())
    }
}

/// Noise-free signal plus ground truth; `generate` adds noise on top.
struct Clean {
    signal: Vec<f64>,
    beats: BeatSeries,
    /// Spec index in force for each sample's minute.
    minute_spec: Vec<usize>,
}

fn gaussian_bump(signal: &mut [f64], centre: f64, sigma: f64, height: f64) {
    let reach = (5.0 * sigma).ceil() as i64;
    let c = centre.round() as i64;
    for i in (c - reach).max(0)..=(c + reach).min(signal.len() as i64 - 1) {
        let d = i as f64 - centre;
        signal[i as usize] += height * (-d * d / (2.0 * sigma * sigma)).exp();
    }
}

fn render(specs: &[&SynthSpec], pick: impl Fn(usize) -> usize, duration_s: f64, seed: u64) -> Clean {
    let fs = specs[0].fs;
    let fsf = fs as f64;
    let n = (duration_s * fsf).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec_at = |t: f64| specs[pick((t / 60.0) as usize)];
    let rr_at = |t: f64| 60.0 / spec_at(t).heart_rate.bpm_at_minute((t / 60.0) as usize);

    let tail = (0.1 * fsf).ceil() as usize;
    let mut r_idx = Vec::new();
    let mut t = 0.5 * rr_at(0.0);
    loop {
        let r = (t * fsf).round() as usize;
        if r + tail >= n {
            break;
        }
        if r_idx.last().is_none_or(|&p| r > p) {
            r_idx.push(r);
        }
        let spec = spec_at(t);
        let z: f64 = StandardNormal.sample(&mut rng);
        let step = rr_at(t) * (1.0 + spec.rr_jitter * z);
        t += step.clamp(0.25, 3.0);
    }

    let mut signal = vec![0.0; n];
    for &r in &r_idx {
        let spec = spec_at(r as f64 / fsf);
        gaussian_bump(&mut signal, r as f64, R_WIDTH_S * fsf, spec.r_amp);
        gaussian_bump(&mut signal, r as f64 + S_LAG_S * fsf, S_WIDTH_S * fsf, -spec.s_amp);
    }

    let mut beats = BeatSeries::empty(fs);
    for &r in &r_idx {
        let hi = (r + tail).min(n - 1);
        let s = (r..=hi).min_by(|&a, &b| signal[a].total_cmp(&signal[b])).unwrap_or(r);
        let lo = r.saturating_sub(tail / 2);
        let argmax = (lo..=(r + tail / 2).min(n - 1))
            .max_by(|&a, &b| signal[a].total_cmp(&signal[b]).then(b.cmp(&a)))
            .unwrap_or(r);
        assert_eq!(argmax, r, "template R is not the local maximum");
        beats.r_idx.push(r);
        beats.r_amp.push(signal[r]);
        beats.s_idx.push(s);
        beats.s_amp.push(signal[s]);
    }

    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let minute_spec: Vec<usize> = (0..n).map(|i| pick(i / (60 * fs as usize))).collect();
    for (i, v) in signal.iter_mut().enumerate() {
        let w = specs[minute_spec[i]].baseline_wander;
        if w != 0.0 {
            *v += w * (std::f64::consts::TAU * WANDER_HZ * i as f64 / fsf + phase).sin();
        }
    }
    Clean {
        signal,
        beats,
        minute_spec,
    }
}

/// Adds white noise per minute, scaled to that minute's clean power.
fn add_noise(clean: &mut Clean, specs: &[&SynthSpec], fs: u32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let per_minute = 60 * fs as usize;
    for start in (0..clean.signal.len()).step_by(per_minute) {
        let end = (start + per_minute).min(clean.signal.len());
        let Some(snr) = specs[clean.minute_spec[start]].noise_snr_db else {
            continue;
        };
        let chunk = &mut clean.signal[start..end];
        let power = chunk.iter().map(|v| v * v).sum::<f64>() / chunk.len() as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        for v in chunk.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
}

/// Single-spec record (no labels) and its ground-truth beats.
pub fn generate(spec: &SynthSpec) -> Result<(EcgRecord, BeatSeries), SynthError> {
    spec.validate()?;
    let specs = [spec];
    let mut clean = render(&specs, |_| 0, spec.duration_s, spec.seed);
    add_noise(&mut clean, &specs, spec.fs, spec.seed);
    let record = EcgRecord::new(format!("synth{}", spec.seed), spec.fs, clean.signal, Vec::new())
        .expect("synthetic record is valid");
    Ok((record, clean.beats))
}

/// `n_minutes` of ECG where odd minutes follow `sa` (labelled apnea) and even
/// minutes follow `non`. Duration fields of both specs are ignored.
pub fn generate_labeled_pair(
    sa: &SynthSpec,
    non: &SynthSpec,
    n_minutes: usize,
) -> Result<(EcgRecord, BeatSeries), SynthError> {
    sa.validate()?;
    non.validate()?;
    if sa.fs != non.fs {
        return Err(SynthError::InvalidParameter(format!(
            "sampling rates differ ({} vs {})",
            sa.fs, non.fs
        )));
    }
    let labels: Vec<Label> = (0..n_minutes)
        .map(|m| if m % 2 == 1 { Label::Apnea } else { Label::NonApnea })
        .collect();
    let id = format!("pair{}", sa.seed);
    if n_minutes == 0 {
        let record = EcgRecord::new(id, sa.fs, Vec::new(), labels).expect("empty record is valid");
        return Ok((record, BeatSeries::empty(sa.fs)));
    }
    let seed = sa.seed ^ non.seed.rotate_left(32);
    let specs = [non, sa];
    let pick = |m: usize| m % 2;
    let mut clean = render(&specs, pick, n_minutes as f64 * 60.0, seed);
    add_noise(&mut clean, &specs, sa.fs, seed);
    let record = EcgRecord::new(id, sa.fs, clean.signal, labels).expect("synthetic record is valid");
    Ok((record, clean.beats))
}

/// Default pair used by the toy classification task: SA minutes have lower R
/// and deeper S than non-SA minutes.
pub fn separable_specs(seed: u64) -> (SynthSpec, SynthSpec) {
    let sa = SynthSpec {
        heart_rate: HeartRate::Constant(66.0),
        r_amp: 0.6,
        s_amp: 0.45,
        noise_snr_db: Some(20.0),
        rr_jitter: 0.03,
        seed,
        ..SynthSpec::default()
    };
    let non = SynthSpec {
        heart_rate: HeartRate::Constant(62.0),
        r_amp: 1.0,
        s_amp: 0.25,
        noise_snr_db: Some(20.0),
        rr_jitter: 0.03,
        seed: seed.wrapping_add(1),
        ..SynthSpec::default()
    };
    (sa, non)
}
