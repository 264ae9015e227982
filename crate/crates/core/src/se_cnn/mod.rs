//! Desk-scale 1D CNN: strided stem, residual blocks of grouped convolution with a
//! squeeze-and-excitation gate, global pooling and a softmax head. Gradients are
//! derived by hand; the same code runs in `f32` for training and `f64` for checks.

mod checkpoint;
mod layers;
mod train;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_extract::FeatureSegment;
use crate::wfdb_io::{Label, WfdbError};
use layers::{lit, BnCache, ConvShape};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use layers::Scalar;
pub use train::{record_level_split, select_best_epoch, train, EpochStats, TrainConfig, TrainOutcome};

pub const STEM_KERNEL: usize = 7;
pub const STEM_STRIDE: usize = 3;
pub const BLOCK_KERNEL: usize = 3;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input has {found} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("input length {0} collapses to zero inside the network")]
    InputTooShort(usize),
    #[error("segments have inconsistent lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("label {label} out of range for {n_classes} classes")]
    BadLabel { label: usize, n_classes: usize },
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("non-finite loss at epoch {epoch}; last good checkpoint is from epoch {}", last_good.meta.epoch)]
    Diverged { epoch: u32, last_good: Box<Checkpoint> },
    #[error("checkpoint: {0}")]
    Format(#[from] WfdbError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub n_blocks: usize,
    pub width: usize,
    pub cardinality: usize,
    pub se_reduction: usize,
    pub n_classes: usize,
}

impl ModelConfig {
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            n_blocks: 3,
            width: 32,
            cardinality: 4,
            se_reduction: 8,
            n_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.in_channels == 0 || self.n_blocks == 0 || self.width == 0 {
            return bad("in_channels, n_blocks and width must be positive".into());
        }
        if self.cardinality == 0 || !self.width.is_multiple_of(self.cardinality) {
            return bad(format!("width {} not divisible by cardinality {}", self.width, self.cardinality));
        }
        if self.se_reduction == 0 || self.se_reduction > self.width {
            return bad(format!("se_reduction {} must be in 1..={}", self.se_reduction, self.width));
        }
        if self.n_classes < 2 {
            return bad("need at least two classes".into());
        }
        Ok(())
    }

    pub fn se_hidden(&self) -> usize {
        (self.width / self.se_reduction).max(1)
    }

    pub fn n_params(&self) -> usize {
        Layout::new(self).total
    }

    /// Number of normalised channels (stem plus one per block).
    pub fn n_bn_channels(&self) -> usize {
        (self.n_blocks + 1) * self.width
    }

    fn stem(&self) -> ConvShape {
        ConvShape {
            cin: self.in_channels,
            cout: self.width,
            k: STEM_KERNEL,
            stride: STEM_STRIDE,
            pad: STEM_KERNEL / 2,
            groups: 1,
        }
    }

    fn block_conv(&self) -> ConvShape {
        ConvShape {
            cin: self.width,
            cout: self.width,
            k: BLOCK_KERNEL,
            stride: 1,
            pad: BLOCK_KERNEL / 2,
            groups: self.cardinality,
        }
    }
}

#[derive(Debug, Clone)]
struct BlockLayout {
    conv: Range<usize>,
    gamma: Range<usize>,
    beta: Range<usize>,
    fc1_w: Range<usize>,
    fc1_b: Range<usize>,
    fc2_w: Range<usize>,
    fc2_b: Range<usize>,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    stem: Range<usize>,
    stem_gamma: Range<usize>,
    stem_beta: Range<usize>,
    blocks: Vec<BlockLayout>,
    head_w: Range<usize>,
    head_b: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w = cfg.width;
        let h = cfg.se_hidden();
        let stem = take(cfg.stem().n_weights());
        let stem_gamma = take(w);
        let stem_beta = take(w);
        let blocks = (0..cfg.n_blocks)
            .map(|_| BlockLayout {
                conv: take(cfg.block_conv().n_weights()),
                gamma: take(w),
                beta: take(w),
                fc1_w: take(h * w),
                fc1_b: take(h),
                fc2_w: take(w * h),
                fc2_b: take(w),
            })
            .collect();
        let head_w = take(cfg.n_classes * w);
        let head_b = take(cfg.n_classes);
        Self {
            stem,
            stem_gamma,
            stem_beta,
            blocks,
            head_w,
            head_b,
            total: at,
        }
    }
}

/// How normalisation layers get their statistics.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, T> {
    /// Batch statistics (training).
    Batch,
    /// Running statistics, `[n_blocks + 1][width]` flattened.
    Running { mean: &'a [T], var: &'a [T] },
}

struct BlockCache<T> {
    u: Vec<T>,
    len: usize,
    bn: Option<BnCache<T>>,
    r: Vec<T>,
    s: Vec<T>,
    z1: Vec<T>,
    g: Vec<T>,
}

/// Forward activations kept for the backward pass.
pub struct Forward<T> {
    pub probs: Vec<T>,
    /// Batch mean and biased variance per normalised channel (`Batch` mode only).
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    batch: usize,
    len: usize,
    stem_len: usize,
    stem_bn: Option<BnCache<T>>,
    stem_out: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    last_len: usize,
    pooled: Vec<T>,
    bypass_se: bool,
}

fn check_geometry(cfg: &ModelConfig, len: usize) -> Result<(), ModelError> {
    let mut l = cfg.stem().out_len(len);
    if len < STEM_KERNEL / 2 + 1 || l == 0 {
        return Err(ModelError::InputTooShort(len));
    }
    for _ in 1..cfg.n_blocks {
        l /= 2;
        if l == 0 {
            return Err(ModelError::InputTooShort(len));
        }
    }
    Ok(())
}

/// Runs the network on `x` (`[batch, in_channels, len]`).
pub fn forward<T: Scalar>(
    cfg: &ModelConfig,
    params: &[T],
    x: &[T],
    batch: usize,
    len: usize,
    mode: BnMode<'_, T>,
    bypass_se: bool,
) -> Result<Forward<T>, ModelError> {
    cfg.validate()?;
    check_geometry(cfg, len)?;
    let lay = Layout::new(cfg);
    assert_eq!(params.len(), lay.total, "parameter vector does not match config");
    if x.len() != batch * cfg.in_channels * len {
        return Err(ModelError::ChannelMismatch {
            expected: cfg.in_channels,
            found: x.len() / (batch * len).max(1),
        });
    }
    let w = cfg.width;
    let eps: T = lit(BN_EPS);
    let mut batch_mean = Vec::new();
    let mut batch_var = Vec::new();
    let mut norm = |input: &[T], l: usize, idx: usize, gamma: &[T], beta: &[T]| -> (Vec<T>, Option<BnCache<T>>) {
        match mode {
            BnMode::Batch => {
                let out = layers::bn_train(input, batch, w, l, gamma, beta, eps);
                batch_mean.extend_from_slice(&out.mean);
                batch_var.extend_from_slice(&out.var);
                (out.y, Some(out.cache))
            }
            BnMode::Running { mean, var } => {
                let (m, v) = (&mean[idx * w..(idx + 1) * w], &var[idx * w..(idx + 1) * w]);
                (layers::bn_eval(input, batch, w, l, gamma, beta, m, v, eps), None)
            }
        }
    };

    let stem_shape = cfg.stem();
    let stem_len = stem_shape.out_len(len);
    let a0 = layers::conv_forward(x, batch, len, &params[lay.stem.clone()], &stem_shape);
    let (n0, stem_bn) = norm(&a0, stem_len, 0, &params[lay.stem_gamma.clone()], &params[lay.stem_beta.clone()]);
    let stem_out = layers::relu(&n0);

    let conv = cfg.block_conv();
    let hidden = cfg.se_hidden();
    let mut u = stem_out.clone();
    let mut l = stem_len;
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for (i, bl) in lay.blocks.iter().enumerate() {
        let c = layers::conv_forward(&u, batch, l, &params[bl.conv.clone()], &conv);
        let (n, bn) = norm(&c, l, i + 1, &params[bl.gamma.clone()], &params[bl.beta.clone()]);
        let r = layers::relu(&n);
        let (s, z1, g) = if bypass_se {
            (Vec::new(), Vec::new(), vec![T::one(); batch * w])
        } else {
            let s = layers::global_avg(&r, l);
            let z1 = layers::dense(&s, batch, w, &params[bl.fc1_w.clone()], &params[bl.fc1_b.clone()]);
            let z = layers::relu(&z1);
            let g1 = layers::dense(&z, batch, hidden, &params[bl.fc2_w.clone()], &params[bl.fc2_b.clone()]);
            (s, z1, g1.into_iter().map(layers::sigmoid).collect())
        };
        let mut o = u.clone();
        for (row, (orow, rrow)) in o.chunks_mut(l).zip(r.chunks(l)).enumerate() {
            let gate = g[row];
            for (ov, &rv) in orow.iter_mut().zip(rrow) {
                *ov = *ov + rv * gate;
            }
        }
        blocks.push(BlockCache {
            u,
            len: l,
            bn,
            r,
            s,
            z1,
            g,
        });
        if i + 1 < cfg.n_blocks {
            u = layers::avg_pool2(&o, l);
            l /= 2;
        } else {
            u = o;
        }
    }
    let pooled = layers::global_avg(&u, l);
    let logits = layers::dense(&pooled, batch, w, &params[lay.head_w.clone()], &params[lay.head_b.clone()]);
    Ok(Forward {
        probs: layers::softmax(&logits, cfg.n_classes),
        batch_mean,
        batch_var,
        batch,
        len,
        stem_len,
        stem_bn,
        stem_out,
        blocks,
        last_len: l,
        pooled,
        bypass_se,
    })
}

impl<T> Forward<T> {
    /// Values averaged by each normalisation layer (batch times length).
    pub fn bn_sample_counts(&self) -> Vec<usize> {
        std::iter::once(self.stem_len)
            .chain(self.blocks.iter().map(|b| b.len))
            .map(|l| l * self.batch)
            .collect()
    }
}

/// Mean cross-entropy of `probs` (`[batch, n_classes]`) against class indices.
pub fn cross_entropy<T: Scalar>(probs: &[T], labels: &[usize], n_classes: usize) -> T {
    let tiny: T = T::min_positive_value();
    let sum = labels
        .iter()
        .enumerate()
        .fold(T::zero(), |a, (b, &y)| a - probs[b * n_classes + y].max(tiny).ln());
    sum / lit(labels.len() as f64)
}

/// Gradient of the mean cross-entropy w.r.t. every parameter. Requires a
/// forward pass in `BnMode::Batch` on the same input.
pub fn backward<T: Scalar>(cfg: &ModelConfig, params: &[T], x: &[T], fwd: &Forward<T>, labels: &[usize]) -> Vec<T> {
    let lay = Layout::new(cfg);
    let (batch, w, k) = (fwd.batch, cfg.width, cfg.n_classes);
    assert_eq!(labels.len(), batch);
    let mut grad = vec![T::zero(); lay.total];
    let inv_b: T = lit(1.0 / batch as f64);

    let mut dlogits = fwd.probs.clone();
    for (b, &y) in labels.iter().enumerate() {
        dlogits[b * k + y] = dlogits[b * k + y] - T::one();
    }
    for d in dlogits.iter_mut() {
        *d = *d * inv_b;
    }
    let (head_w, rest) = grad.split_at_mut(lay.head_b.start);
    let dpooled = layers::dense_backward(
        &fwd.pooled,
        batch,
        w,
        &params[lay.head_w.clone()],
        &dlogits,
        &mut head_w[lay.head_w.clone()],
        &mut rest[..k],
    );
    let inv_l: T = lit(1.0 / fwd.last_len as f64);
    let mut dnext: Vec<T> = dpooled
        .iter()
        .flat_map(|&d| std::iter::repeat_n(d * inv_l, fwd.last_len))
        .collect();

    let conv = cfg.block_conv();
    let hidden = cfg.se_hidden();
    for (i, (bl, cache)) in lay.blocks.iter().zip(&fwd.blocks).enumerate().rev() {
        let l = cache.len;
        let d_o = if i + 1 < cfg.n_blocks {
            layers::avg_pool2_backward(&dnext, l)
        } else {
            dnext
        };
        let mut du = d_o.clone();
        let mut dr = vec![T::zero(); d_o.len()];
        let mut dg = vec![T::zero(); batch * w];
        for row in 0..batch * w {
            let gate = cache.g[row];
            let mut acc = T::zero();
            for t in row * l..(row + 1) * l {
                dr[t] = d_o[t] * gate;
                acc = acc + d_o[t] * cache.r[t];
            }
            dg[row] = acc;
        }
        if !fwd.bypass_se {
            let dg1: Vec<T> = dg
                .iter()
                .zip(&cache.g)
                .map(|(&d, &g)| d * g * (T::one() - g))
                .collect();
            let z = layers::relu(&cache.z1);
            let mut dw2 = vec![T::zero(); bl.fc2_w.len()];
            let mut db2 = vec![T::zero(); w];
            let dz = layers::dense_backward(&z, batch, hidden, &params[bl.fc2_w.clone()], &dg1, &mut dw2, &mut db2);
            let dz1: Vec<T> = dz
                .iter()
                .zip(&cache.z1)
                .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                .collect();
            let mut dw1 = vec![T::zero(); bl.fc1_w.len()];
            let mut db1 = vec![T::zero(); hidden];
            let ds = layers::dense_backward(&cache.s, batch, w, &params[bl.fc1_w.clone()], &dz1, &mut dw1, &mut db1);
            grad[bl.fc2_w.clone()].copy_from_slice(&dw2);
            grad[bl.fc2_b.clone()].copy_from_slice(&db2);
            grad[bl.fc1_w.clone()].copy_from_slice(&dw1);
            grad[bl.fc1_b.clone()].copy_from_slice(&db1);
            let il: T = lit(1.0 / l as f64);
            for row in 0..batch * w {
                let d = ds[row] * il;
                for t in row * l..(row + 1) * l {
                    dr[t] = dr[t] + d;
                }
            }
        }
        let dn: Vec<T> = dr
            .iter()
            .zip(&cache.r)
            .map(|(&d, &r)| if r > T::zero() { d } else { T::zero() })
            .collect();
        let bn = cache.bn.as_ref().expect("backward needs a batch-statistics forward pass");
        let (dc, dgamma, dbeta) = layers::bn_backward(&dn, bn, batch, w, l, &params[bl.gamma.clone()]);
        grad[bl.gamma.clone()].copy_from_slice(&dgamma);
        grad[bl.beta.clone()].copy_from_slice(&dbeta);
        let (dx, dwc) = layers::conv_backward(&cache.u, batch, l, &params[bl.conv.clone()], &conv, &dc, true);
        grad[bl.conv.clone()].copy_from_slice(&dwc);
        for (a, b) in du.iter_mut().zip(dx) {
            *a = *a + b;
        }
        dnext = du;
    }

    let dn0: Vec<T> = dnext
        .iter()
        .zip(&fwd.stem_out)
        .map(|(&d, &h)| if h > T::zero() { d } else { T::zero() })
        .collect();
    let bn = fwd.stem_bn.as_ref().expect("backward needs a batch-statistics forward pass");
    let (da0, dgamma, dbeta) = layers::bn_backward(&dn0, bn, batch, w, fwd.stem_len, &params[lay.stem_gamma.clone()]);
    grad[lay.stem_gamma.clone()].copy_from_slice(&dgamma);
    grad[lay.stem_beta.clone()].copy_from_slice(&dbeta);
    let (_, dws) = layers::conv_backward(x, batch, fwd.len, &params[lay.stem.clone()], &cfg.stem(), &da0, false);
    grad[lay.stem.clone()].copy_from_slice(&dws);
    grad
}

/// Loss and gradient for one batch with batch statistics.
pub fn loss_and_grad<T: Scalar>(
    cfg: &ModelConfig,
    params: &[T],
    x: &[T],
    len: usize,
    labels: &[usize],
) -> Result<(T, Vec<T>, Forward<T>), ModelError> {
    if let Some(&label) = labels.iter().find(|&&y| y >= cfg.n_classes) {
        return Err(ModelError::BadLabel {
            label,
            n_classes: cfg.n_classes,
        });
    }
    let fwd = forward(cfg, params, x, labels.len(), len, BnMode::Batch, false)?;
    let loss = cross_entropy(&fwd.probs, labels, cfg.n_classes);
    let grad = backward(cfg, params, x, &fwd, labels);
    Ok((loss, grad, fwd))
}

/// Trainable parameters and normalisation running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SeCnn {
    pub config: ModelConfig,
    pub params: Vec<f32>,
    pub bn_mean: Vec<f32>,
    pub bn_var: Vec<f32>,
}

impl SeCnn {
    /// He-initialised convolutions and gate, small head, unit BN scale.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let lay = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; lay.total];
        let mut fill = |r: Range<usize>, fan_in: usize, gain: f64| {
            let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("valid std");
            for p in &mut params[r] {
                *p = dist.sample(&mut rng) as f32;
            }
        };
        let w = config.width;
        fill(lay.stem.clone(), config.in_channels * STEM_KERNEL, 2.0);
        for bl in &lay.blocks {
            fill(bl.conv.clone(), (w / config.cardinality) * BLOCK_KERNEL, 2.0);
            fill(bl.fc1_w.clone(), w, 2.0);
            fill(bl.fc2_w.clone(), config.se_hidden(), 1.0);
        }
        fill(lay.head_w.clone(), w, 1.0);
        for r in std::iter::once(lay.stem_gamma.clone()).chain(lay.blocks.iter().map(|b| b.gamma.clone())) {
            params[r].fill(1.0);
        }
        Ok(Self {
            config,
            params,
            bn_mean: vec![0.0; config.n_bn_channels()],
            bn_var: vec![1.0; config.n_bn_channels()],
        })
    }

    /// Sets the classifier head to zero so every output is uniform.
    pub fn zero_head(&mut self) {
        let lay = Layout::new(&self.config);
        self.params[lay.head_w].fill(0.0);
        self.params[lay.head_b].fill(0.0);
    }

    /// Sets the head bias, e.g. to force a saturated prediction.
    pub fn set_head_bias(&mut self, bias: &[f32]) {
        let lay = Layout::new(&self.config);
        self.params[lay.head_b].copy_from_slice(bias);
    }

    /// Inference-mode class probabilities for a `[batch, in_channels, len]` tensor.
    pub fn predict_tensor(&self, x: &[f32], batch: usize, len: usize, bypass_se: bool) -> Result<Vec<f32>, ModelError> {
        if batch == 0 {
            return Ok(Vec::new());
        }
        let mode = BnMode::Running {
            mean: &self.bn_mean,
            var: &self.bn_var,
        };
        Ok(forward(&self.config, &self.params, x, batch, len, mode, bypass_se)?.probs)
    }

    /// Per-segment class probabilities, evaluated in chunks of `chunk` segments.
    pub fn predict_proba(&self, segments: &[FeatureSegment], chunk: usize) -> Result<Vec<Vec<f64>>, ModelError> {
        let (x, len) = segments_to_tensor(segments, self.config.in_channels)?;
        let per = self.config.in_channels * len;
        let mut out = Vec::with_capacity(segments.len());
        for (i, part) in x.chunks(per * chunk.max(1)).enumerate() {
            let n = part.len() / per.max(1);
            let probs = self.predict_tensor(part, n, len, false)?;
            debug_assert!(i * chunk.max(1) + n <= segments.len());
            out.extend(probs.chunks(self.config.n_classes).map(|r| r.iter().map(|&p| p as f64).collect()));
        }
        Ok(out)
    }

    /// Apnea iff the apnea-class probability is at least `threshold`.
    pub fn predict(&self, segments: &[FeatureSegment], threshold: f64) -> Result<Vec<Label>, ModelError> {
        Ok(self
            .predict_proba(segments, 256)?
            .iter()
            .map(|p| label_from_proba(p, threshold))
            .collect())
    }
}

pub fn label_from_proba(p: &[f64], threshold: f64) -> Label {
    if p[Label::Apnea as usize] >= threshold {
        Label::Apnea
    } else {
        Label::NonApnea
    }
}

/// Stacks segment channels into an `f32` tensor, checking channel count and length.
pub fn segments_to_tensor(segments: &[FeatureSegment], in_channels: usize) -> Result<(Vec<f32>, usize), ModelError> {
    let len = segments
        .first()
        .and_then(|s| s.channels.first())
        .map_or(0, Vec::len);
    let mut x = Vec::with_capacity(segments.len() * in_channels * len);
    for s in segments {
        if s.channels.len() != in_channels {
            return Err(ModelError::ChannelMismatch {
                expected: in_channels,
                found: s.channels.len(),
            });
        }
        for ch in &s.channels {
            if ch.len() != len {
                return Err(ModelError::LengthMismatch(len, ch.len()));
            }
            x.extend(ch.iter().map(|&v| v as f32));
        }
    }
    Ok((x, len))
}
