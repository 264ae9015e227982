//! Batched 1D layers with hand-written gradients. Tensors are flat `[batch, channel, time]`.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use rayon::prelude::*;

pub trait Scalar: Float + FromPrimitive + Send + Sync + Debug + Default + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable constant")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvShape {
    pub fn out_len(&self, lin: usize) -> usize {
        (lin + 2 * self.pad).saturating_sub(self.k) / self.stride + 1
    }

    pub fn n_weights(&self) -> usize {
        self.cout * (self.cin / self.groups) * self.k
    }

    /// Output positions `t` for which tap `k` reads inside the input.
    fn valid(&self, k: usize, lin: usize, lout: usize) -> (usize, usize) {
        let t0 = if self.pad > k {
            (self.pad - k).div_ceil(self.stride)
        } else {
            0
        };
        let t1 = if lin + self.pad > k {
            ((lin - 1 + self.pad - k) / self.stride + 1).min(lout)
        } else {
            0
        };
        (t0, t1.max(t0))
    }
}

/// Column matrix `[cig * k, lout]` of one group: row `(ci, k)` holds the input
/// samples tap `k` of channel `ci` sees at each output position (zero outside).
fn im2col<T: Scalar>(x: &[T], lin: usize, s: &ConvShape, group: usize, cols: &mut [T]) {
    let lout = s.out_len(lin);
    let cig = s.cin / s.groups;
    for ci in 0..cig {
        let xrow = &x[(group * cig + ci) * lin..(group * cig + ci + 1) * lin];
        for k in 0..s.k {
            let (t0, t1) = s.valid(k, lin, lout);
            let row = &mut cols[(ci * s.k + k) * lout..(ci * s.k + k + 1) * lout];
            row[..t0].fill(T::zero());
            row[t1..].fill(T::zero());
            if t0 >= t1 {
                continue;
            }
            let x0 = t0 * s.stride + k - s.pad;
            if s.stride == 1 {
                row[t0..t1].copy_from_slice(&xrow[x0..x0 + (t1 - t0)]);
            } else {
                for (c, &xv) in row[t0..t1].iter_mut().zip(xrow[x0..].iter().step_by(s.stride)) {
                    *c = xv;
                }
            }
        }
    }
}

/// Scatter-adds a column-matrix gradient back onto the input gradient.
fn col2im<T: Scalar>(dcols: &[T], lin: usize, s: &ConvShape, group: usize, dx: &mut [T]) {
    let lout = s.out_len(lin);
    let cig = s.cin / s.groups;
    for ci in 0..cig {
        let dxrow = &mut dx[(group * cig + ci) * lin..(group * cig + ci + 1) * lin];
        for k in 0..s.k {
            let (t0, t1) = s.valid(k, lin, lout);
            if t0 >= t1 {
                continue;
            }
            let row = &dcols[(ci * s.k + k) * lout..(ci * s.k + k + 1) * lout];
            let x0 = t0 * s.stride + k - s.pad;
            for (d, &c) in dxrow[x0..].iter_mut().step_by(s.stride).zip(&row[t0..t1]) {
                *d = *d + c;
            }
        }
    }
}

fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

/// Dot product with eight interleaved partial sums, combined in a fixed order.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    let s4 = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (s4[0] + s4[2]) + (s4[1] + s4[3]) + tail
}

fn conv_one<T: Scalar>(x: &[T], lin: usize, w: &[T], s: &ConvShape, y: &mut [T]) {
    let lout = s.out_len(lin);
    let taps = (s.cin / s.groups) * s.k;
    let cog = s.cout / s.groups;
    let mut cols = vec![T::zero(); taps * lout];
    for g in 0..s.groups {
        im2col(x, lin, s, g, &mut cols);
        for co in g * cog..(g + 1) * cog {
            let yrow = &mut y[co * lout..(co + 1) * lout];
            for j in 0..taps {
                axpy(w[co * taps + j], &cols[j * lout..(j + 1) * lout], yrow);
            }
        }
    }
}

pub(crate) fn conv_forward<T: Scalar>(x: &[T], batch: usize, lin: usize, w: &[T], s: &ConvShape) -> Vec<T> {
    let lout = s.out_len(lin);
    let mut y = vec![T::zero(); batch * s.cout * lout];
    y.par_chunks_mut(s.cout * lout)
        .zip(x.par_chunks(s.cin * lin))
        .for_each(|(yb, xb)| conv_one(xb, lin, w, s, yb));
    y
}

/// Returns `(dx, dw)`; `dx` is empty unless requested. Per-sample weight
/// gradients are summed in batch order.
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    lin: usize,
    w: &[T],
    s: &ConvShape,
    dy: &[T],
    need_dx: bool,
) -> (Vec<T>, Vec<T>) {
    let lout = s.out_len(lin);
    let taps = (s.cin / s.groups) * s.k;
    let cog = s.cout / s.groups;
    let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let xb = &x[b * s.cin * lin..(b + 1) * s.cin * lin];
            let dyb = &dy[b * s.cout * lout..(b + 1) * s.cout * lout];
            let mut dx = if need_dx { vec![T::zero(); s.cin * lin] } else { Vec::new() };
            let mut dw = vec![T::zero(); s.n_weights()];
            let mut cols = vec![T::zero(); taps * lout];
            let mut dcols = vec![T::zero(); taps * lout];
            for g in 0..s.groups {
                im2col(xb, lin, s, g, &mut cols);
                dcols.fill(T::zero());
                for co in g * cog..(g + 1) * cog {
                    let dyrow = &dyb[co * lout..(co + 1) * lout];
                    for j in 0..taps {
                        let col = &cols[j * lout..(j + 1) * lout];
                        dw[co * taps + j] = dot(dyrow, col);
                        if need_dx {
                            axpy(w[co * taps + j], dyrow, &mut dcols[j * lout..(j + 1) * lout]);
                        }
                    }
                }
                if need_dx {
                    col2im(&dcols, lin, s, g, &mut dx);
                }
            }
            (dx, dw)
        })
        .collect();
    let mut dx = Vec::with_capacity(if need_dx { batch * s.cin * lin } else { 0 });
    let mut dw = vec![T::zero(); s.n_weights()];
    for (dxb, dwb) in per_sample {
        dx.extend(dxb);
        for (a, b) in dw.iter_mut().zip(dwb) {
            *a = *a + b;
        }
    }
    (dx, dw)
}

pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) struct BnBatch<T> {
    pub y: Vec<T>,
    pub cache: BnCache<T>,
    pub mean: Vec<T>,
    /// Biased (population) variance of the batch.
    pub var: Vec<T>,
}

pub(crate) fn bn_train<T: Scalar>(
    x: &[T],
    batch: usize,
    c: usize,
    len: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> BnBatch<T> {
    let n: T = lit((batch * len) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum = T::zero();
        for b in 0..batch {
            for &v in &x[(b * c + ch) * len..(b * c + ch + 1) * len] {
                sum = sum + v;
            }
        }
        let m = sum / n;
        let mut sq = T::zero();
        for b in 0..batch {
            for &v in &x[(b * c + ch) * len..(b * c + ch + 1) * len] {
                sq = sq + (v - m) * (v - m);
            }
        }
        mean[ch] = m;
        var[ch] = sq / n;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * len;
            for t in base..base + len {
                let h = (x[t] - mean[ch]) * inv_std[ch];
                xhat[t] = h;
                y[t] = gamma[ch] * h + beta[ch];
            }
        }
    }
    BnBatch {
        y,
        cache: BnCache { xhat, inv_std },
        mean,
        var,
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_eval<T: Scalar>(
    x: &[T],
    batch: usize,
    c: usize,
    len: usize,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let scale = gamma[ch] / (var[ch] + eps).sqrt();
            let base = (b * c + ch) * len;
            for t in base..base + len {
                y[t] = (x[t] - mean[ch]) * scale + beta[ch];
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn bn_backward<T: Scalar>(
    dy: &[T],
    cache: &BnCache<T>,
    batch: usize,
    c: usize,
    len: usize,
    gamma: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n: T = lit((batch * len) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * len;
            for t in base..base + len {
                dgamma[ch] = dgamma[ch] + dy[t] * cache.xhat[t];
                dbeta[ch] = dbeta[ch] + dy[t];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..batch {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / n;
            let base = (b * c + ch) * len;
            for t in base..base + len {
                dx[t] = k * (n * dy[t] - dbeta[ch] - cache.xhat[t] * dgamma[ch]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Mean over time: `[batch, c, len] -> [batch, c]`.
pub(crate) fn global_avg<T: Scalar>(x: &[T], len: usize) -> Vec<T> {
    let l: T = lit(len as f64);
    x.chunks(len)
        .map(|row| row.iter().fold(T::zero(), |a, &v| a + v) / l)
        .collect()
}

/// Pairwise average over time; an odd trailing sample is dropped.
pub(crate) fn avg_pool2<T: Scalar>(x: &[T], len: usize) -> Vec<T> {
    let half: T = lit(0.5);
    let out = len / 2;
    x.chunks(len)
        .flat_map(|row| (0..out).map(move |t| (row[2 * t] + row[2 * t + 1]) * half))
        .collect()
}

pub(crate) fn avg_pool2_backward<T: Scalar>(dy: &[T], len: usize) -> Vec<T> {
    let half: T = lit(0.5);
    let out = len / 2;
    let rows = dy.len() / out.max(1);
    let mut dx = vec![T::zero(); rows * len];
    for (r, drow) in dy.chunks(out.max(1)).enumerate().take(rows) {
        for t in 0..out {
            dx[r * len + 2 * t] = drow[t] * half;
            dx[r * len + 2 * t + 1] = drow[t] * half;
        }
    }
    dx
}

/// `y[b, o] = sum_i w[o, i] x[b, i] + bias[o]`.
pub(crate) fn dense<T: Scalar>(x: &[T], batch: usize, nin: usize, w: &[T], bias: &[T]) -> Vec<T> {
    let nout = bias.len();
    let mut y = Vec::with_capacity(batch * nout);
    for b in 0..batch {
        let xb = &x[b * nin..(b + 1) * nin];
        for o in 0..nout {
            let row = &w[o * nin..(o + 1) * nin];
            let acc = row.iter().zip(xb).fold(bias[o], |a, (&wv, &xv)| a + wv * xv);
            y.push(acc);
        }
    }
    y
}

/// Accumulates `dw`, `dbias` and returns `dx`.
pub(crate) fn dense_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    nin: usize,
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let nout = dbias.len();
    let mut dx = vec![T::zero(); batch * nin];
    for b in 0..batch {
        for o in 0..nout {
            let d = dy[b * nout + o];
            dbias[o] = dbias[o] + d;
            for i in 0..nin {
                dw[o * nin + i] = dw[o * nin + i] + d * x[b * nin + i];
                dx[b * nin + i] = dx[b * nin + i] + d * w[o * nin + i];
            }
        }
    }
    dx
}

pub(crate) fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Row-wise softmax of `[batch, k]` logits.
pub(crate) fn softmax<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let z = e.iter().fold(T::zero(), |a, &v| a + v);
        out.extend(e.into_iter().map(|v| v / z));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], lin: usize, w: &[f64], s: &ConvShape) -> Vec<f64> {
        let lout = s.out_len(lin);
        let cig = s.cin / s.groups;
        let cog = s.cout / s.groups;
        let mut y = vec![0.0; s.cout * lout];
        for co in 0..s.cout {
            for t in 0..lout {
                for ci in 0..cig {
                    for k in 0..s.k {
                        let j = (t * s.stride + k) as i64 - s.pad as i64;
                        if j >= 0 && (j as usize) < lin {
                            let xc = (co / cog) * cig + ci;
                            y[co * lout + t] += w[(co * cig + ci) * s.k + k] * x[xc * lin + j as usize];
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        for s in [
            ConvShape { cin: 3, cout: 4, k: 7, stride: 3, pad: 3, groups: 1 },
            ConvShape { cin: 8, cout: 8, k: 3, stride: 1, pad: 1, groups: 4 },
        ] {
            let lin = 31;
            let x: Vec<f64> = (0..s.cin * lin).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
            let w: Vec<f64> = (0..s.n_weights()).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
            let got = conv_forward(&x, 1, lin, &w, &s);
            let want = naive_conv(&x, lin, &w, &s);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stem_geometry() {
        let s = ConvShape { cin: 4, cout: 32, k: 7, stride: 3, pad: 3, groups: 1 };
        assert_eq!(s.out_len(900), 300);
    }

    #[test]
    fn softmax_rows() {
        let p = softmax(&[0.0f64, 0.0, 1000.0, -1000.0], 2);
        assert_eq!(&p[..2], &[0.5, 0.5]);
        assert!((p[2] - 1.0).abs() < 1e-12 && p[3] >= 0.0);
    }
}
