//! Gated recurrent unit.
//!
//! Gate rows are stacked as `[z, r, n]` (update, reset, candidate):
//!
//! ```text
//! z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```
//!
//! Internally sequences are time-major `(steps, b, features)`.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, tanh};

use super::linalg::{add_col_sums, affine_rows, gemm_nn, gemm_tn, transpose};
use super::Tensor;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[3 * hidden, input]),
            w_hh: Tensor::zeros(&[3 * hidden, hidden]),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[1]
    }
}

/// Transposed weights ready for row-major products.
#[derive(Debug, Clone)]
pub(crate) struct GruKernel {
    w_ih_t: Vec<f64>,
    w_hh_t: Vec<f64>,
}

impl GruKernel {
    pub fn new(p: &GruParams) -> Self {
        let (h, input) = (p.hidden(), p.input());
        Self {
            w_ih_t: transpose(3 * h, input, p.w_ih.data()),
            w_hh_t: transpose(3 * h, h, p.w_hh.data()),
        }
    }

    /// Input projections for `rows` rows at once.
    pub fn project_inputs(&self, p: &GruParams, rows: usize, x: &[f64]) -> Vec<f64> {
        affine_rows(rows, p.input(), 3 * p.hidden(), x, &self.w_ih_t, p.b_ih.data())
    }

    /// One recurrent step for `b` rows given their input projections.
    pub fn step(&self, p: &GruParams, b: usize, xproj: &[f64], h_prev: &[f64]) -> StepOut {
        let h = p.hidden();
        let hproj = affine_rows(b, h, 3 * h, h_prev, &self.w_hh_t, p.b_hh.data());
        let mut out = StepOut {
            h: vec![0.0; b * h],
            z: vec![0.0; b * h],
            r: vec![0.0; b * h],
            n: vec![0.0; b * h],
            hn: vec![0.0; b * h],
        };
        for s in 0..b {
            let xp = &xproj[s * 3 * h..(s + 1) * 3 * h];
            let hp = &hproj[s * 3 * h..(s + 1) * 3 * h];
            for j in 0..h {
                let i = s * h + j;
                let z = sigmoid(xp[j] + hp[j]);
                let r = sigmoid(xp[h + j] + hp[h + j]);
                let hn = hp[2 * h + j];
                let n = tanh(xp[2 * h + j] + r * hn);
                out.h[i] = (1.0 - z) * n + z * h_prev[i];
                out.z[i] = z;
                out.r[i] = r;
                out.n[i] = n;
                out.hn[i] = hn;
            }
        }
        out
    }
}

pub(crate) struct StepOut {
    pub h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    steps: usize,
    b: usize,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

/// Runs a whole time-major sequence. Returns every hidden state, time-major.
pub(crate) fn forward_tm(
    p: &GruParams,
    kernel: &GruKernel,
    steps: usize,
    b: usize,
    x: &[f64],
    h0: &[f64],
) -> (Vec<f64>, GruCache) {
    let h = p.hidden();
    let xproj = kernel.project_inputs(p, steps * b, x);
    let mut hs = Vec::with_capacity(steps * b * h);
    let mut cache = GruCache {
        steps,
        b,
        x: x.to_vec(),
        h_prev: Vec::with_capacity(steps * b * h),
        z: Vec::with_capacity(steps * b * h),
        r: Vec::with_capacity(steps * b * h),
        n: Vec::with_capacity(steps * b * h),
        hn: Vec::with_capacity(steps * b * h),
    };
    for t in 0..steps {
        let prev = if t == 0 { h0 } else { &hs[(t - 1) * b * h..t * b * h] };
        let out = kernel.step(p, b, &xproj[t * b * 3 * h..(t + 1) * b * 3 * h], prev);
        cache.h_prev.extend_from_slice(prev);
        cache.z.extend_from_slice(&out.z);
        cache.r.extend_from_slice(&out.r);
        cache.n.extend_from_slice(&out.n);
        cache.hn.extend_from_slice(&out.hn);
        hs.extend_from_slice(&out.h);
    }
    (hs, cache)
}

/// Backpropagation through time. `dh_out` is the time-major gradient of every
/// emitted hidden state. Accumulates parameter gradients into `grads` and
/// returns the input gradient (time-major).
pub(crate) fn backward_tm(p: &GruParams, cache: &GruCache, dh_out: &[f64], grads: &mut GruParams) -> Vec<f64> {
    let (steps, b, h, input) = (cache.steps, cache.b, p.hidden(), p.input());
    let mut dxproj = vec![0.0; steps * b * 3 * h];
    let mut dh_next = vec![0.0; b * h];
    let mut dhproj = vec![0.0; b * 3 * h];
    for t in (0..steps).rev() {
        let base = t * b * h;
        for s in 0..b {
            for j in 0..h {
                let i = s * h + j;
                let dh = dh_out[base + i] + dh_next[i];
                let (z, r, n, hn, hp) = (
                    cache.z[base + i],
                    cache.r[base + i],
                    cache.n[base + i],
                    cache.hn[base + i],
                    cache.h_prev[base + i],
                );
                let dn = dh * (1.0 - z);
                let dz = dh * (hp - n);
                let dan = dn * (1.0 - n * n);
                let dr = dan * hn;
                let daz = dz * z * (1.0 - z);
                let dar = dr * r * (1.0 - r);
                let row = (t * b + s) * 3 * h;
                dxproj[row + j] = daz;
                dxproj[row + h + j] = dar;
                dxproj[row + 2 * h + j] = dan;
                dhproj[s * 3 * h + j] = daz;
                dhproj[s * 3 * h + h + j] = dar;
                dhproj[s * 3 * h + 2 * h + j] = dan * r;
                dh_next[i] = dh * z;
            }
        }
        let h_prev = &cache.h_prev[base..base + b * h];
        gemm_tn(b, 3 * h, h, &dhproj, h_prev, grads.w_hh.data_mut());
        add_col_sums(3 * h, &dhproj, grads.b_hh.data_mut());
        gemm_nn(b, 3 * h, h, &dhproj, p.w_hh.data(), &mut dh_next);
    }
    gemm_tn(steps * b, 3 * h, input, &dxproj, &cache.x, grads.w_ih.data_mut());
    add_col_sums(3 * h, &dxproj, grads.b_ih.data_mut());
    let mut dx = vec![0.0; steps * b * input];
    gemm_nn(steps * b, 3 * h, input, &dxproj, p.w_ih.data(), &mut dx);
    dx
}

/// `(b, n, f)` to `(n, b, f)` and back (the map is its own inverse with the
/// first two extents swapped).
pub(crate) fn swap_leading(a: usize, c: usize, f: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..a {
        for j in 0..c {
            out[(j * a + i) * f..(j * a + i + 1) * f].copy_from_slice(&x[(i * c + j) * f..(i * c + j + 1) * f]);
        }
    }
    out
}

/// Runs a GRU over `x_seq (b, n, f_in)` from `h0 (b, h)`. Returns all hidden
/// states `(b, n, h)` and the final state `(b, h)`.
pub fn gru_forward_with_state(x_seq: &Tensor, h0: &Tensor, params: &GruParams) -> Result<(Tensor, Tensor)> {
    x_seq.expect_rank("gru_forward", 3)?;
    let (b, n) = (x_seq.shape()[0], x_seq.shape()[1]);
    let (input, h) = (params.input(), params.hidden());
    x_seq.expect_shape("gru_forward input", &[b, n, input])?;
    h0.expect_shape("gru_forward h0", &[b, h])?;
    let kernel = GruKernel::new(params);
    let x_tm = swap_leading(b, n, input, x_seq.data());
    let (hs_tm, _) = forward_tm(params, &kernel, n, b, &x_tm, h0.data());
    let last = Tensor::from_vec(&[b, h], hs_tm[(n - 1) * b * h..].to_vec())?;
    let all = Tensor::from_vec(&[b, n, h], swap_leading(n, b, h, &hs_tm))?;
    Ok((all, last))
}

pub fn gru_forward(x_seq: &Tensor, h0: &Tensor, params: &GruParams) -> Result<Tensor> {
    gru_forward_with_state(x_seq, h0, params).map(|(all, _)| all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(input: usize, h: usize, seed: u64) -> GruParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GruParams::zeros(input, h);
        for t in [&mut p.w_ih, &mut p.w_hh, &mut p.b_ih, &mut p.b_hh] {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        p
    }

    #[test]
    fn zero_weights_stay_at_zero() {
        let p = GruParams::zeros(3, 4);
        let x = Tensor::filled(&[2, 5, 3], 0.7);
        let y = gru_forward(&x, &Tensor::zeros(&[2, 4]), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_equations() {
        let p = random_params(2, 3, 5);
        let x = Tensor::from_vec(&[1, 1, 2], vec![0.3, -0.8]).unwrap();
        let h0 = Tensor::from_vec(&[1, 3], vec![0.1, -0.2, 0.4]).unwrap();
        let y = gru_forward(&x, &h0, &p).unwrap();

        // hand-written scalar reference
        let (wi, wh, bi, bh) = (p.w_ih.data(), p.w_hh.data(), p.b_ih.data(), p.b_hh.data());
        let dot = |w: &[f64], row: usize, v: &[f64]| -> f64 {
            v.iter().enumerate().map(|(k, x)| w[row * v.len() + k] * x).sum()
        };
        let xv = x.data();
        let hv = h0.data();
        for j in 0..3 {
            let z = sigmoid(dot(wi, j, xv) + bi[j] + dot(wh, j, hv) + bh[j]);
            let r = sigmoid(dot(wi, 3 + j, xv) + bi[3 + j] + dot(wh, 3 + j, hv) + bh[3 + j]);
            let n = libm::tanh(dot(wi, 6 + j, xv) + bi[6 + j] + r * (dot(wh, 6 + j, hv) + bh[6 + j]));
            let want = (1.0 - z) * n + z * hv[j];
            assert!((y.data()[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn threading_hidden_state_matches_full_run() {
        let p = random_params(3, 5, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..2 * 10 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[2, 10, 3], data.clone()).unwrap();
        let h0 = Tensor::zeros(&[2, 5]);
        let full = gru_forward(&x, &h0, &p).unwrap();

        let part = |from: usize, to: usize| {
            let mut d = Vec::new();
            for s in 0..2 {
                d.extend_from_slice(&data[(s * 10 + from) * 3..(s * 10 + to) * 3]);
            }
            Tensor::from_vec(&[2, to - from, 3], d).unwrap()
        };
        let (a, mid) = gru_forward_with_state(&part(0, 4), &h0, &p).unwrap();
        let b = gru_forward(&part(4, 10), &mid, &p).unwrap();
        for s in 0..2 {
            for t in 0..10 {
                for j in 0..5 {
                    let got = if t < 4 {
                        a.data()[(s * 4 + t) * 5 + j]
                    } else {
                        b.data()[(s * 6 + t - 4) * 5 + j]
                    };
                    assert!((got - full.data()[(s * 10 + t) * 5 + j]).abs() <= 1e-12);
                }
            }
        }
    }
}
