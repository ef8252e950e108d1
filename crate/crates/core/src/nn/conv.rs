//! The two 3D convolutions of the feature extractor.
//!
//! The first convolution reads `(hand, frame, keypoint, xyz)` with kernel
//! `(3, 4, 3)`, padding `(1, 3, 0)` and stride `(1, 4, 1)`. That turns the 21
//! keypoints into 6 groups (wrist and the five fingers) and the three
//! coordinates into one. The second convolution, kernel `(1, 6, 1)`, fuses the
//! six groups.
//!
//! Internally activations are channels-last: one row per `(sample, frame,
//! group)` for the first layer and per `(sample, frame)` for the second.

use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{affine_rows, transpose};
use super::Tensor;
use crate::landmarks::{FRAME_LEN, POINTS_PER_HAND};
use crate::Result;

pub const HANDS: usize = 2;
pub const COORDS: usize = 3;
pub const CONV1_KERNEL: [usize; 3] = [3, 4, 3];
pub const CONV1_PADDING: [usize; 3] = [1, 3, 0];
pub const CONV1_STRIDE: [usize; 3] = [1, 4, 1];
pub const CONV2_KERNEL: [usize; 3] = [1, 6, 1];
/// Keypoint groups after the first convolution.
pub const GROUPS: usize = 6;
/// Taps of one first-layer output: hands x time x keypoints x coords.
pub const PATCH_LEN: usize = HANDS * 3 * 4 * 3;

/// `(input + 2 * padding - kernel) / stride + 1`
pub fn conv_output_extent(input: usize, kernel: usize, padding: usize, stride: usize) -> usize {
    assert!(input + 2 * padding >= kernel, "kernel larger than padded input");
    (input + 2 * padding - kernel) / stride + 1
}

/// Writes the `GROUPS` first-layer patches centred on one frame.
/// `frames` holds the previous, current and next frame; `None` is zero padding.
pub(crate) fn fill_patches(frames: [Option<&[f64]>; 3], out: &mut [f64]) {
    debug_assert_eq!(out.len(), GROUPS * PATCH_LEN);
    out.fill(0.0);
    for (group, row) in out.chunks_exact_mut(PATCH_LEN).enumerate() {
        for (kt, frame) in frames.iter().enumerate() {
            let Some(frame) = frame else { continue };
            for hand in 0..HANDS {
                for kh in 0..4 {
                    let padded = group * CONV1_STRIDE[1] + kh;
                    if padded < CONV1_PADDING[1] || padded - CONV1_PADDING[1] >= POINTS_PER_HAND {
                        continue;
                    }
                    let point = padded - CONV1_PADDING[1];
                    let src = hand * POINTS_PER_HAND * COORDS + point * COORDS;
                    let dst = hand * 36 + kt * 12 + kh * 3;
                    row[dst..dst + COORDS].copy_from_slice(&frame[src..src + COORDS]);
                }
            }
        }
    }
}

/// Patches for a frame-major batch `(b, n, 126)`: `(b * n * 6) x PATCH_LEN`.
pub(crate) fn batch_patches(frames: &[f64], b: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * n * GROUPS * PATCH_LEN];
    let frame = |s: usize, t: usize| &frames[(s * n + t) * FRAME_LEN..(s * n + t + 1) * FRAME_LEN];
    for s in 0..b {
        for t in 0..n {
            let window = [
                t.checked_sub(1).map(|p| frame(s, p)),
                Some(frame(s, t)),
                (t + 1 < n).then(|| frame(s, t + 1)),
            ];
            let row = (s * n + t) * GROUPS * PATCH_LEN;
            fill_patches(window, &mut out[row..row + GROUPS * PATCH_LEN]);
        }
    }
    out
}

/// Second-layer weights `(c2, c1, 1, 6, 1)` reordered to `c2 x (6 * c1)` so
/// they line up with channels-last first-layer rows.
pub(crate) fn conv2_matrix(weight: &[f64], c1: usize, c2: usize) -> Vec<f64> {
    let mut out = vec![0.0; c2 * GROUPS * c1];
    for o in 0..c2 {
        for ci in 0..c1 {
            for g in 0..GROUPS {
                out[o * GROUPS * c1 + g * c1 + ci] = weight[(o * c1 + ci) * GROUPS + g];
            }
        }
    }
    out
}

/// Inverse of [`conv2_matrix`].
pub(crate) fn conv2_unmatrix(matrix: &[f64], c1: usize, c2: usize) -> Vec<f64> {
    let mut out = vec![0.0; c2 * c1 * GROUPS];
    for o in 0..c2 {
        for ci in 0..c1 {
            for g in 0..GROUPS {
                out[(o * c1 + ci) * GROUPS + g] = matrix[o * GROUPS * c1 + g * c1 + ci];
            }
        }
    }
    out
}

/// `(b, 2, n, 21, 3)` to frame-major `(b, n, 126)`.
pub(crate) fn to_frame_major(input: &Tensor) -> Vec<f64> {
    let s = input.shape();
    let (b, n) = (s[0], s[2]);
    let block = POINTS_PER_HAND * COORDS;
    let src = input.data();
    let mut out = vec![0.0; b * n * FRAME_LEN];
    for si in 0..b {
        for hand in 0..HANDS {
            for t in 0..n {
                let from = ((si * HANDS + hand) * n + t) * block;
                let to = (si * n + t) * FRAME_LEN + hand * block;
                out[to..to + block].copy_from_slice(&src[from..from + block]);
            }
        }
    }
    out
}

/// First convolution on a `(b, 2, n, 21, 3)` tensor; returns `(b, c1, n, 6, 1)`.
pub fn conv3d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    input.expect_rank("conv3d_forward", 5)?;
    let (b, n) = (input.shape()[0], input.shape()[2]);
    input.expect_shape("conv3d_forward", &[b, HANDS, n, POINTS_PER_HAND, COORDS])?;
    let c1 = weight.shape().first().copied().unwrap_or(0);
    weight.expect_shape("conv3d_forward weight", &[c1, HANDS, 3, 4, 3])?;
    bias.expect_shape("conv3d_forward bias", &[c1])?;

    let patches = batch_patches(&to_frame_major(input), b, n);
    let w_t = transpose(c1, PATCH_LEN, weight.data());
    let rows = affine_rows(b * n * GROUPS, PATCH_LEN, c1, &patches, &w_t, bias.data());

    let mut out = Tensor::zeros(&[b, c1, n, GROUPS, 1]);
    let data = out.data_mut();
    for s in 0..b {
        for t in 0..n {
            for g in 0..GROUPS {
                for c in 0..c1 {
                    data[((s * c1 + c) * n + t) * GROUPS + g] = rows[((s * n + t) * GROUPS + g) * c1 + c];
                }
            }
        }
    }
    Ok(out)
}

/// Second convolution on a `(b, c1, n, 6, 1)` tensor; returns `(b, c2, n, 1, 1)`.
pub fn conv3d_second_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    input.expect_rank("conv3d_second_forward", 5)?;
    let (b, c1, n) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    input.expect_shape("conv3d_second_forward", &[b, c1, n, GROUPS, 1])?;
    let c2 = weight.shape().first().copied().unwrap_or(0);
    weight.expect_shape("conv3d_second_forward weight", &[c2, c1, 1, GROUPS, 1])?;
    bias.expect_shape("conv3d_second_forward bias", &[c2])?;

    let src = input.data();
    let mut rows_in = vec![0.0; b * n * GROUPS * c1];
    for s in 0..b {
        for c in 0..c1 {
            for t in 0..n {
                for g in 0..GROUPS {
                    rows_in[((s * n + t) * GROUPS + g) * c1 + c] = src[((s * c1 + c) * n + t) * GROUPS + g];
                }
            }
        }
    }
    let w_t = transpose(c2, GROUPS * c1, &conv2_matrix(weight.data(), c1, c2));
    let rows = affine_rows(b * n, GROUPS * c1, c2, &rows_in, &w_t, bias.data());

    let mut out = Tensor::zeros(&[b, c2, n, 1, 1]);
    let data = out.data_mut();
    for s in 0..b {
        for t in 0..n {
            for c in 0..c2 {
                data[(s * c2 + c) * n + t] = rows[(s * n + t) * c2 + c];
            }
        }
    }
    Ok(out)
}
