//! The full classifier:
//!
//! ```text
//! conv1 -> bn -> relu -> conv2 -> bn -> relu -> (b, n, f)
//!   -> gru1 -> gru2 -> dropout -> fc1 -> relu -> fc2 -> softmax
//! ```

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{self, batch_patches, conv2_matrix, conv2_unmatrix, fill_patches, GROUPS, PATCH_LEN};
use super::gru::{self, swap_leading, GruCache, GruKernel, GruParams};
use super::layers::{
    bn_backward, bn_forward_eval, bn_forward_train, dropout_mask, relu_backward_in_place, relu_in_place,
    softmax_backward, softmax_rows_in_place, BatchNormParams, BnCache,
};
use super::linalg::{add_col_sums, affine_rows, gemm_nn, gemm_tn, transpose};
use super::{ModelConfig, Tensor};
use crate::labels::NUM_CLASSES;
use crate::landmarks::FRAME_LEN;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }
}

/// Every weight of the classifier, including batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv1_weight: Tensor,
    pub conv1_bias: Tensor,
    pub bn1: BatchNormParams,
    pub conv2_weight: Tensor,
    pub conv2_bias: Tensor,
    pub bn2: BatchNormParams,
    pub gru1: GruParams,
    pub gru2: GruParams,
    pub fc1: DenseParams,
    pub fc2: DenseParams,
}

macro_rules! named_fields {
    ($s:ident, $($r:tt)*) => {
        vec![
            ("conv1.weight", $($r)* $s.conv1_weight),
            ("conv1.bias", $($r)* $s.conv1_bias),
            ("bn1.gamma", $($r)* $s.bn1.gamma),
            ("bn1.beta", $($r)* $s.bn1.beta),
            ("bn1.running_mean", $($r)* $s.bn1.running_mean),
            ("bn1.running_var", $($r)* $s.bn1.running_var),
            ("conv2.weight", $($r)* $s.conv2_weight),
            ("conv2.bias", $($r)* $s.conv2_bias),
            ("bn2.gamma", $($r)* $s.bn2.gamma),
            ("bn2.beta", $($r)* $s.bn2.beta),
            ("bn2.running_mean", $($r)* $s.bn2.running_mean),
            ("bn2.running_var", $($r)* $s.bn2.running_var),
            ("gru1.w_ih", $($r)* $s.gru1.w_ih),
            ("gru1.w_hh", $($r)* $s.gru1.w_hh),
            ("gru1.b_ih", $($r)* $s.gru1.b_ih),
            ("gru1.b_hh", $($r)* $s.gru1.b_hh),
            ("gru2.w_ih", $($r)* $s.gru2.w_ih),
            ("gru2.w_hh", $($r)* $s.gru2.w_hh),
            ("gru2.b_ih", $($r)* $s.gru2.b_ih),
            ("gru2.b_hh", $($r)* $s.gru2.b_hh),
            ("fc1.weight", $($r)* $s.fc1.weight),
            ("fc1.bias", $($r)* $s.fc1.bias),
            ("fc2.weight", $($r)* $s.fc2.weight),
            ("fc2.bias", $($r)* $s.fc2.bias),
        ]
    };
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

impl ModelParams {
    /// All-zero weights (running variance 1, gamma 1) with the shapes of `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let (c1, c2, h, fc) = (
            config.conv1_channels,
            config.conv2_channels,
            config.gru_hidden,
            config.fc_hidden,
        );
        Self {
            conv1_weight: Tensor::zeros(&[c1, conv::HANDS, 3, 4, 3]),
            conv1_bias: Tensor::zeros(&[c1]),
            bn1: BatchNormParams::new(c1),
            conv2_weight: Tensor::zeros(&[c2, c1, 1, GROUPS, 1]),
            conv2_bias: Tensor::zeros(&[c2]),
            bn2: BatchNormParams::new(c2),
            gru1: GruParams::zeros(c2, h),
            gru2: GruParams::zeros(h, h),
            fc1: DenseParams::zeros(h, fc),
            fc2: DenseParams::zeros(fc, config.num_classes),
        }
    }

    /// Weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; biases zero,
    /// batch norm at identity.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, t) in params.named_mut() {
            let is_weight = name.ends_with("weight") || name.ends_with("w_ih") || name.ends_with("w_hh");
            if !is_weight {
                continue;
            }
            let fan_in: usize = t.shape()[1..].iter().product();
            let bound = 1.0 / sqrt(fan_in as f64);
            for v in t.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        named_fields!(self, &)
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        named_fields!(self, &mut)
    }

    /// Parameters that receive gradients (running statistics excluded).
    pub fn trainable(&self) -> Vec<(&'static str, &Tensor)> {
        self.named().into_iter().filter(|(n, _)| !is_running_stat(n)).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        self.named_mut().into_iter().filter(|(n, _)| !is_running_stat(n)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    /// Expected `(name, shape)` of every tensor for `config`.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
        Self::zeros(config)
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect()
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        for ((name, t), (_, want)) in self.named().into_iter().zip(Self::expected_shapes(config)) {
            t.expect_shape(name, &want)?;
        }
        Ok(())
    }

    /// Builds parameters from named tensors; every name must be present once
    /// with the shape `config` implies.
    pub fn from_named(config: &ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut params = Self::zeros(config);
        let mut seen = vec![false; params.named().len()];
        for (name, tensor) in tensors {
            let mut slots = params.named_mut();
            let idx = slots
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown tensor {name}")))?;
            let slot = &mut slots[idx].1;
            tensor.expect_shape("ModelParams::from_named", slot.shape())?;
            **slot = tensor;
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let name = params.named()[missing].0;
            return Err(Error::InvalidConfig(alloc::format!("missing tensor {name}")));
        }
        Ok(params)
    }

    /// Zero tensors with this model's shapes, e.g. a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.named_mut() {
            t.data_mut().fill(0.0);
        }
        out
    }

    /// Folds the batch statistics of a training forward pass into the
    /// batch-norm running estimates.
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        if let Some(stats) = &cache.bn1.stats {
            self.bn1.absorb(stats);
        }
        if let Some(stats) = &cache.bn2.stats {
            self.bn2.absorb(stats);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Batch statistics for batch norm and a dropout mask drawn from the seed.
    Train { dropout_seed: u64 },
}

/// Weight layouts prepared for row-major products; shared by the batch
/// forward pass and frame-by-frame streaming so both do identical arithmetic.
#[derive(Debug, Clone)]
struct FrameKernels {
    conv1_t: Vec<f64>,
    conv2_t: Vec<f64>,
    gru1: GruKernel,
    gru2: GruKernel,
    fc1_t: Vec<f64>,
    fc2_t: Vec<f64>,
}

impl FrameKernels {
    pub fn new(p: &ModelParams, config: &ModelConfig) -> Self {
        let (c1, c2, h, fc) = (
            config.conv1_channels,
            config.conv2_channels,
            config.gru_hidden,
            config.fc_hidden,
        );
        let conv2_m = conv2_matrix(p.conv2_weight.data(), c1, c2);
        Self {
            conv1_t: transpose(c1, PATCH_LEN, p.conv1_weight.data()),
            conv2_t: transpose(c2, GROUPS * c1, &conv2_m),
            gru1: GruKernel::new(&p.gru1),
            gru2: GruKernel::new(&p.gru2),
            fc1_t: transpose(fc, h, p.fc1.weight.data()),
            fc2_t: transpose(config.num_classes, fc, p.fc2.weight.data()),
        }
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    b: usize,
    n: usize,
    config: ModelConfig,
    patches: Vec<f64>,
    bn1: BnCache,
    a1: Vec<f64>,
    bn2: BnCache,
    a2: Vec<f64>,
    gru1: GruCache,
    gru2: GruCache,
    mask: Option<Vec<f64>>,
    dropped: Vec<f64>,
    a3: Vec<f64>,
    probs: Vec<f64>,
}

fn validate_input(input: &Tensor, params: &ModelParams, config: &ModelConfig) -> Result<(usize, usize)> {
    config.validate()?;
    params.check_shapes(config)?;
    input.expect_rank("model_forward", 5)?;
    let (b, n) = (input.shape()[0], input.shape()[2]);
    input.expect_shape("model_forward", &[b, conv::HANDS, n, 21, 3])?;
    Ok((b, n))
}

/// Forward pass over frame-major input `(b, n, 126)`; returns probabilities
/// `(b * n) x 28` and the cache.
pub(crate) fn forward_frames(
    p: &ModelParams,
    config: &ModelConfig,
    frames: &[f64],
    b: usize,
    n: usize,
    mode: Mode,
) -> Result<(Vec<f64>, ForwardCache)> {
    if matches!(mode, Mode::Train { .. }) && b < 2 {
        return Err(Error::DegenerateBatch(b));
    }
    debug_assert_eq!(frames.len(), b * n * FRAME_LEN);
    let k = FrameKernels::new(p, config);
    let (c1, c2, h, fc, classes) = (
        config.conv1_channels,
        config.conv2_channels,
        config.gru_hidden,
        config.fc_hidden,
        config.num_classes,
    );
    let rows1 = b * n * GROUPS;
    let rows = b * n;

    let patches = batch_patches(frames, b, n);
    let y1 = affine_rows(rows1, PATCH_LEN, c1, &patches, &k.conv1_t, p.conv1_bias.data());
    let (mut a1, bn1) = match mode {
        Mode::Train { .. } => bn_forward_train(rows1, c1, &y1, &p.bn1),
        Mode::Eval => bn_forward_eval(c1, &y1, &p.bn1),
    };
    relu_in_place(&mut a1);

    let y2 = affine_rows(rows, GROUPS * c1, c2, &a1, &k.conv2_t, p.conv2_bias.data());
    let (mut a2, bn2) = match mode {
        Mode::Train { .. } => bn_forward_train(rows, c2, &y2, &p.bn2),
        Mode::Eval => bn_forward_eval(c2, &y2, &p.bn2),
    };
    relu_in_place(&mut a2);

    let x_tm = swap_leading(b, n, c2, &a2);
    let zeros = vec![0.0; b * h];
    let (h1_tm, gru1) = gru::forward_tm(&p.gru1, &k.gru1, n, b, &x_tm, &zeros);
    let (h2_tm, gru2) = gru::forward_tm(&p.gru2, &k.gru2, n, b, &h1_tm, &zeros);
    let mut dropped = swap_leading(n, b, h, &h2_tm);

    let mask = match mode {
        Mode::Train { dropout_seed } => {
            let mask = dropout_mask(dropped.len(), config.dropout, dropout_seed);
            for (v, m) in dropped.iter_mut().zip(&mask) {
                *v *= m;
            }
            Some(mask)
        }
        Mode::Eval => None,
    };

    let mut a3 = affine_rows(rows, h, fc, &dropped, &k.fc1_t, p.fc1.bias.data());
    relu_in_place(&mut a3);
    let mut probs = affine_rows(rows, fc, classes, &a3, &k.fc2_t, p.fc2.bias.data());
    softmax_rows_in_place(classes, &mut probs);

    let cache = ForwardCache {
        b,
        n,
        config: *config,
        patches,
        bn1,
        a1,
        bn2,
        a2,
        gru1,
        gru2,
        mask,
        dropped,
        a3,
        probs: probs.clone(),
    };
    Ok((probs, cache))
}

/// Runs the classifier on `(b, 2, n, 21, 3)` input; returns `(b, n, 28)`
/// per-frame class probabilities.
pub fn model_forward(input: &Tensor, params: &ModelParams, config: &ModelConfig, mode: Mode) -> Result<Tensor> {
    model_forward_with_cache(input, params, config, mode).map(|(t, _)| t)
}

pub fn model_forward_with_cache(
    input: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
) -> Result<(Tensor, ForwardCache)> {
    let (b, n) = validate_input(input, params, config)?;
    let frames = conv::to_frame_major(input);
    let (probs, cache) = forward_frames(params, config, &frames, b, n, mode)?;
    Ok((Tensor::from_vec(&[b, n, config.num_classes], probs)?, cache))
}

/// Gradients of a scalar loss with respect to every trainable parameter,
/// given `dprobs = dL/dprobs` with shape `(b, n, 28)`. Running statistics get
/// zero gradient.
pub fn model_backward(params: &ModelParams, cache: &ForwardCache, dprobs: &Tensor) -> Result<ModelParams> {
    let config = &cache.config;
    let (b, n) = (cache.b, cache.n);
    dprobs.expect_shape("model_backward", &[b, n, config.num_classes])?;
    let (c1, c2, h, fc, classes) = (
        config.conv1_channels,
        config.conv2_channels,
        config.gru_hidden,
        config.fc_hidden,
        config.num_classes,
    );
    let rows = b * n;
    let rows1 = rows * GROUPS;
    let mut g = params.zeros_like();

    let dlogits = softmax_backward(classes, &cache.probs, dprobs.data());

    gemm_tn(rows, classes, fc, &dlogits, &cache.a3, g.fc2.weight.data_mut());
    add_col_sums(classes, &dlogits, g.fc2.bias.data_mut());
    let mut da3 = vec![0.0; rows * fc];
    gemm_nn(rows, classes, fc, &dlogits, params.fc2.weight.data(), &mut da3);
    relu_backward_in_place(&mut da3, &cache.a3);

    gemm_tn(rows, fc, h, &da3, &cache.dropped, g.fc1.weight.data_mut());
    add_col_sums(fc, &da3, g.fc1.bias.data_mut());
    let mut dh2 = vec![0.0; rows * h];
    gemm_nn(rows, fc, h, &da3, params.fc1.weight.data(), &mut dh2);
    if let Some(mask) = &cache.mask {
        for (d, m) in dh2.iter_mut().zip(mask) {
            *d *= m;
        }
    }

    let dh2_tm = swap_leading(b, n, h, &dh2);
    let dh1_tm = gru::backward_tm(&params.gru2, &cache.gru2, &dh2_tm, &mut g.gru2);
    let da2_tm = gru::backward_tm(&params.gru1, &cache.gru1, &dh1_tm, &mut g.gru1);
    let mut da2 = swap_leading(n, b, c2, &da2_tm);
    relu_backward_in_place(&mut da2, &cache.a2);

    let dy2 = bn_backward(
        c2,
        &da2,
        &cache.bn2,
        params.bn2.gamma.data(),
        g.bn2.gamma.data_mut(),
        g.bn2.beta.data_mut(),
    );
    let conv2_m = conv2_matrix(params.conv2_weight.data(), c1, c2);
    let mut dconv2_m = vec![0.0; c2 * GROUPS * c1];
    gemm_tn(rows, c2, GROUPS * c1, &dy2, &cache.a1, &mut dconv2_m);
    g.conv2_weight
        .data_mut()
        .copy_from_slice(&conv2_unmatrix(&dconv2_m, c1, c2));
    add_col_sums(c2, &dy2, g.conv2_bias.data_mut());
    let mut da1 = vec![0.0; rows1 * c1];
    gemm_nn(rows, c2, GROUPS * c1, &dy2, &conv2_m, &mut da1);
    relu_backward_in_place(&mut da1, &cache.a1);

    let dy1 = bn_backward(
        c1,
        &da1,
        &cache.bn1,
        params.bn1.gamma.data(),
        g.bn1.gamma.data_mut(),
        g.bn1.beta.data_mut(),
    );
    gemm_tn(rows1, c1, PATCH_LEN, &dy1, &cache.patches, g.conv1_weight.data_mut());
    add_col_sums(c1, &dy1, g.conv1_bias.data_mut());
    Ok(g)
}

/// Frame-at-a-time evaluation with the exact arithmetic of the batch pass.
#[derive(Debug, Clone)]
pub(crate) struct FramePipeline {
    kernels: FrameKernels,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

impl FramePipeline {
    pub fn new(params: &ModelParams, config: &ModelConfig) -> Self {
        Self {
            kernels: FrameKernels::new(params, config),
            h1: vec![0.0; config.gru_hidden],
            h2: vec![0.0; config.gru_hidden],
        }
    }

    pub fn reset(&mut self) {
        self.h1.fill(0.0);
        self.h2.fill(0.0);
    }

    pub fn hidden_states(&self) -> (&[f64], &[f64]) {
        (&self.h1, &self.h2)
    }

    /// Classifies the middle frame of `[previous, current, next]`, advancing
    /// both recurrent states by one step.
    pub fn step(
        &mut self,
        p: &ModelParams,
        config: &ModelConfig,
        frames: [Option<&[f64]>; 3],
    ) -> [f64; NUM_CLASSES] {
        let k = &self.kernels;
        let (c1, c2, fc, classes) = (
            config.conv1_channels,
            config.conv2_channels,
            config.fc_hidden,
            config.num_classes,
        );
        let mut patches = [0.0; GROUPS * PATCH_LEN];
        fill_patches(frames, &mut patches);
        let y1 = affine_rows(GROUPS, PATCH_LEN, c1, &patches, &k.conv1_t, p.conv1_bias.data());
        let (mut a1, _) = bn_forward_eval(c1, &y1, &p.bn1);
        relu_in_place(&mut a1);
        let y2 = affine_rows(1, GROUPS * c1, c2, &a1, &k.conv2_t, p.conv2_bias.data());
        let (mut a2, _) = bn_forward_eval(c2, &y2, &p.bn2);
        relu_in_place(&mut a2);

        let xp1 = k.gru1.project_inputs(&p.gru1, 1, &a2);
        self.h1 = k.gru1.step(&p.gru1, 1, &xp1, &self.h1).h;
        let xp2 = k.gru2.project_inputs(&p.gru2, 1, &self.h1);
        self.h2 = k.gru2.step(&p.gru2, 1, &xp2, &self.h2).h;

        let mut a3 = affine_rows(1, config.gru_hidden, fc, &self.h2, &k.fc1_t, p.fc1.bias.data());
        relu_in_place(&mut a3);
        let mut logits = affine_rows(1, fc, classes, &a3, &k.fc2_t, p.fc2.bias.data());
        softmax_rows_in_place(classes, &mut logits);
        let mut out = [0.0; NUM_CLASSES];
        out.copy_from_slice(&logits);
        out
    }
}
