//! Row-major matrix kernels. The innermost loops run over contiguous output
//! rows so the compiler can vectorize them without reassociating sums.

use alloc::vec;
use alloc::vec::Vec;

/// `c (m x n) += a (m x k) * b (k x n)`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c (k x n) += a^T * b` with `a (m x k)` and `b (m x n)`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for (a_row, b_row) in a.chunks_exact(k).zip(b.chunks_exact(n)) {
        for (&av, c_row) in a_row.iter().zip(c.chunks_exact_mut(n)) {
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

pub(crate) fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// `x (m x k) * w_t (k x n) + bias`, bias first so every caller sums in the
/// same order.
pub(crate) fn affine_rows(m: usize, k: usize, n: usize, x: &[f64], w_t: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    gemm_nn(m, k, n, x, w_t, &mut out);
    out
}

/// Adds the column sums of `a (m x n)` into `acc`.
pub(crate) fn add_col_sums(n: usize, a: &[f64], acc: &mut [f64]) {
    for row in a.chunks_exact(n) {
        for (s, v) in acc.iter_mut().zip(row) {
            *s += v;
        }
    }
}
