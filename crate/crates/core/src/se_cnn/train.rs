use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_grad, segments_to_tensor, Checkpoint, CheckpointMeta, ModelConfig, ModelError, SeCnn, BN_MOMENTUM};
use crate::feature_extract::FeatureSegment;
use crate::metrics_eval::{compute_metrics, confusion, MetricsReport};
use crate::wfdb_io::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u32,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 100,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidTrainConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub train_loss: f64,
    pub val: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochStats>,
}

/// 1-based epoch with the highest score; the earliest wins ties.
pub fn select_best_epoch(val_f1: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_f1.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|(_, b)| v > b) {
            best = Some((i + 1, v));
        }
    }
    best.map(|(e, _)| e)
}

/// Splits segments by record: a seeded shuffle of the sorted record ids sends
/// `round(fraction * n)` records (at least one, never all) to validation.
/// With a single record both sets are the full input.
pub fn record_level_split(
    segments: &[FeatureSegment],
    fraction: f64,
    seed: u64,
) -> (Vec<FeatureSegment>, Vec<FeatureSegment>) {
    let mut ids: Vec<&str> = segments.iter().map(|s| s.record_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return (segments.to_vec(), segments.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    ids.shuffle(&mut rng);
    let n_val = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let val_ids = &ids[..n_val];
    let (val, train): (Vec<_>, Vec<_>) = segments
        .iter()
        .cloned()
        .partition(|s| val_ids.contains(&s.record_id.as_str()));
    (train, val)
}

fn labels_of(segments: &[&FeatureSegment]) -> Vec<Label> {
    segments.iter().map(|s| s.label).collect()
}

/// Mini-batch SGD with momentum; keeps the epoch with the best validation F1
/// for the apnea class. Training segments are put in canonical
/// `(record, minute)` order first, so only the seed drives batch composition.
pub fn train(
    config: ModelConfig,
    tc: &TrainConfig,
    train_set: &[FeatureSegment],
    val_set: &[FeatureSegment],
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    tc.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(ModelError::EmptySet("validation"));
    }
    let mut sorted: Vec<&FeatureSegment> = train_set.iter().collect();
    sorted.sort_by(|a, b| {
        (a.record_id.as_str(), a.minute_index, a.label).cmp(&(b.record_id.as_str(), b.minute_index, b.label))
    });
    let owned: Vec<FeatureSegment> = sorted.iter().map(|s| (*s).clone()).collect();
    let (x_all, len) = segments_to_tensor(&owned, config.in_channels)?;
    let val_len = val_set[0].channels.first().map_or(0, Vec::len);
    if val_len != len {
        return Err(ModelError::LengthMismatch(len, val_len));
    }
    let y_all: Vec<usize> = sorted.iter().map(|s| s.label as usize).collect();
    let val_truth = labels_of(&val_set.iter().collect::<Vec<_>>());
    let per = config.in_channels * len;

    let mut model = SeCnn::new(config, tc.seed)?;
    let mut velocity = vec![0.0f32; model.params.len()];
    let mut sampler = ChaCha8Rng::seed_from_u64(tc.seed);
    sampler.set_stream(1);
    let lr = tc.learning_rate as f32;
    let mu = tc.momentum as f32;
    let m = BN_MOMENTUM as f32;

    let meta = |epoch, val_f1_sa, train_loss| CheckpointMeta {
        epoch,
        val_f1_sa,
        train_loss,
        seed: tc.seed,
        n_train: owned.len() as u64,
    };
    let mut last_good = Checkpoint::new(model.clone(), meta(0, 0.0, f64::NAN));
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::with_capacity(tc.epochs as usize);
    let mut order: Vec<usize> = (0..owned.len()).collect();
    let mut xb = Vec::with_capacity(tc.batch_size * per);
    let mut yb = Vec::with_capacity(tc.batch_size);

    for epoch in 1..=tc.epochs {
        order.sort_unstable();
        order.shuffle(&mut sampler);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(tc.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&x_all[i * per..(i + 1) * per]);
                yb.push(y_all[i]);
            }
            let (loss, grad, fwd) = loss_and_grad(&config, &model.params, &xb, len, &yb)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::Diverged {
                    epoch,
                    last_good: Box::new(last_good),
                });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            let counts = fwd.bn_sample_counts();
            let w = config.width;
            for (layer, &n) in counts.iter().enumerate() {
                let unbias = if n > 1 { n as f32 / (n - 1) as f32 } else { 1.0 };
                for c in layer * w..(layer + 1) * w {
                    model.bn_mean[c] = (1.0 - m) * model.bn_mean[c] + m * fwd.batch_mean[c];
                    model.bn_var[c] = (1.0 - m) * model.bn_var[c] + m * fwd.batch_var[c] * unbias;
                }
            }
            for ((p, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        }
        let train_loss = loss_sum / owned.len() as f64;
        let predicted = model.predict(val_set, 0.5)?;
        let report = compute_metrics(&confusion(&predicted, &val_truth).expect("equal lengths"));
        log::info!(
            "epoch {epoch}: loss {train_loss:.4} val acc {:.4} f1_sa {:.4}",
            report.accuracy,
            report.f1_sa
        );
        let f1 = report.f1_sa;
        history.push(EpochStats {
            epoch,
            train_loss,
            val: report,
        });
        let snapshot = Checkpoint::new(model.clone(), meta(epoch, f1, train_loss));
        if best.as_ref().is_none_or(|b| f1 > b.meta.val_f1_sa) {
            best = Some(snapshot.clone());
        }
        last_good = snapshot;
    }
    let best = best.expect("at least one epoch ran");
    debug_assert_eq!(
        select_best_epoch(&history.iter().map(|h| h.val.f1_sa).collect::<Vec<_>>()),
        Some(best.meta.epoch as usize)
    );
    Ok(TrainOutcome { best, history })
}
