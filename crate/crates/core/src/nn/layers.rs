//! Batch normalization, dropout, rectifier and softmax.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, sqrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's statistics into the running estimates.
    pub(crate) fn absorb(&mut self, stats: &BatchStats) {
        for (rm, m) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m;
        }
        for (rv, v) in self.running_var.data_mut().iter_mut().zip(&stats.unbiased_var) {
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * v;
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
    pub stats: Option<BatchStats>,
}

/// Channels-last batch norm over `rows x c` using batch statistics.
pub(crate) fn bn_forward_train(rows: usize, c: usize, x: &[f64], p: &BatchNormParams) -> (Vec<f64>, BnCache) {
    let n = rows as f64;
    let mut mean = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / sqrt(s / n + BN_EPSILON)).collect();
    let unbiased_var = var.iter().map(|s| s / (n - 1.0).max(1.0)).collect();

    let (y, xhat) = apply(c, x, &mean, &inv_std, p);
    (
        y,
        BnCache {
            xhat,
            inv_std,
            train: true,
            stats: Some(BatchStats { mean, unbiased_var }),
        },
    )
}

/// Channels-last batch norm using the running statistics.
pub(crate) fn bn_forward_eval(c: usize, x: &[f64], p: &BatchNormParams) -> (Vec<f64>, BnCache) {
    let inv_std: Vec<f64> = p.running_var.data().iter().map(|v| 1.0 / sqrt(v + BN_EPSILON)).collect();
    let (y, xhat) = apply(c, x, p.running_mean.data(), &inv_std, p);
    (
        y,
        BnCache {
            xhat,
            inv_std,
            train: false,
            stats: None,
        },
    )
}

fn apply(c: usize, x: &[f64], mean: &[f64], inv_std: &[f64], p: &BatchNormParams) -> (Vec<f64>, Vec<f64>) {
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    let (gamma, beta) = (p.gamma.data(), p.beta.data());
    for row in x.chunks_exact(c) {
        for j in 0..c {
            let h = (row[j] - mean[j]) * inv_std[j];
            xhat.push(h);
            y.push(gamma[j] * h + beta[j]);
        }
    }
    (y, xhat)
}

/// Returns `dx` and accumulates into `dgamma` / `dbeta`.
pub(crate) fn bn_backward(
    c: usize,
    dy: &[f64],
    cache: &BnCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let rows = dy.len() / c;
    let mut sum_dxhat = vec![0.0; c];
    let mut sum_dxhat_xhat = vec![0.0; c];
    for (dyr, xr) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for j in 0..c {
            dgamma[j] += dyr[j] * xr[j];
            dbeta[j] += dyr[j];
            let dxhat = dyr[j] * gamma[j];
            sum_dxhat[j] += dxhat;
            sum_dxhat_xhat[j] += dxhat * xr[j];
        }
    }
    let n = rows as f64;
    let mut dx = Vec::with_capacity(dy.len());
    for (dyr, xr) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for j in 0..c {
            let dxhat = dyr[j] * gamma[j];
            dx.push(if cache.train {
                cache.inv_std[j] / n * (n * dxhat - sum_dxhat[j] - xr[j] * sum_dxhat_xhat[j])
            } else {
                dxhat * cache.inv_std[j]
            });
        }
    }
    dx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Batch norm on an `(b, C, ...)` tensor, normalizing each channel over the
/// batch and all trailing axes. Training mode updates the running statistics.
pub fn batchnorm_forward(input: &Tensor, params: &mut BatchNormParams, phase: Phase) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() < 2 || shape[1] != params.channels() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm_forward",
            expected: vec![0, params.channels()],
            actual: shape.to_vec(),
        });
    }
    let (b, c) = (shape[0], shape[1]);
    if phase == Phase::Train && b < 2 {
        return Err(Error::DegenerateBatch(b));
    }
    let inner: usize = shape[2..].iter().product();
    let src = input.data();
    let mut rows = vec![0.0; input.len()];
    for s in 0..b {
        for ch in 0..c {
            for i in 0..inner {
                rows[(s * inner + i) * c + ch] = src[(s * c + ch) * inner + i];
            }
        }
    }
    let y = match phase {
        Phase::Train => {
            let (y, cache) = bn_forward_train(b * inner, c, &rows, params);
            if let Some(stats) = &cache.stats {
                params.absorb(stats);
            }
            y
        }
        Phase::Eval => bn_forward_eval(c, &rows, params).0,
    };
    let mut out = input.zeros_like();
    let data = out.data_mut();
    for s in 0..b {
        for ch in 0..c {
            for i in 0..inner {
                data[(s * c + ch) * inner + i] = y[(s * inner + i) * c + ch];
            }
        }
    }
    Ok(out)
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1 / (1 - p)`.
pub(crate) fn dropout_mask(len: usize, p: f64, seed: u64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    if p == 0.0 {
        return vec![keep; len];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout; identity outside training.
pub fn dropout_forward(input: &Tensor, p: f64, phase: Phase, seed: u64) -> Tensor {
    match phase {
        Phase::Eval => input.clone(),
        Phase::Train => {
            let mask = dropout_mask(input.len(), p, seed);
            let mut out = input.clone();
            for (v, m) in out.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
            out
        }
    }
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the rectifier output was zero.
pub(crate) fn relu_backward_in_place(grad: &mut [f64], output: &[f64]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn softmax_rows_in_place(c: usize, x: &mut [f64]) {
    for row in x.chunks_exact_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Gradient through a row softmax given its output `p` and upstream `dp`.
pub(crate) fn softmax_backward(c: usize, p: &[f64], dp: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.len());
    for (pr, dr) in p.chunks_exact(c).zip(dp.chunks_exact(c)) {
        let dot: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        out.extend(pr.iter().zip(dr).map(|(pv, dv)| pv * (dv - dot)));
    }
    out
}

pub fn softmax(input: &Tensor) -> Tensor {
    let c = *input.shape().last().expect("softmax on a scalar");
    let mut out = input.clone();
    softmax_rows_in_place(c, out.data_mut());
    out
}
