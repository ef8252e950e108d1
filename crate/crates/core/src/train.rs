//! Losses, Adagrad, the plateau scheduler, recording-level folds and the
//! training loop.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{log, sqrt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::labels::{smooth_classes, sliding_windows, KeyClass, Window, NUM_CLASSES};
use crate::landmarks::{augment_landmarks_seeded, normalize_sequence, FrameLandmarks, DEFAULT_JITTER_WINDOW, FRAME_LEN};
use crate::nn::{model_backward, ModelConfig, ModelParams, Tensor};
use crate::nn::{forward_frames, Mode};
use crate::{Error, Result};

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const ADAGRAD_EPSILON: f64 = 1e-10;
pub const PLATEAU_FACTOR: f64 = 0.5;
pub const PLATEAU_PATIENCE: usize = 3;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn class_rows(op: &'static str, t: &Tensor) -> Result<usize> {
    match t.shape().last() {
        Some(&NUM_CLASSES) => Ok(t.len() / NUM_CLASSES),
        _ => Err(Error::ShapeMismatch {
            op,
            expected: vec![NUM_CLASSES],
            actual: t.shape().to_vec(),
        }),
    }
}

/// Mean squared error over every component.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape("mse_loss", pred, target)?;
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Class-weighted cross entropy, averaged over frames.
pub fn weighted_ce_loss(pred: &Tensor, target: &Tensor, weights: &[f64; NUM_CLASSES]) -> Result<f64> {
    same_shape("weighted_ce_loss", pred, target)?;
    let frames = class_rows("weighted_ce_loss", pred)?;
    let mut sum = 0.0;
    for (p, t) in pred.data().chunks_exact(NUM_CLASSES).zip(target.data().chunks_exact(NUM_CLASSES)) {
        for c in 0..NUM_CLASSES {
            if t[c] != 0.0 {
                sum += weights[c] * t[c] * log(p[c].max(LOG_CLAMP));
            }
        }
    }
    Ok(-sum / frames as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mse,
    WeightedCrossEntropy([f64; NUM_CLASSES]),
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::WeightedCrossEntropy(_) => "wce",
        }
    }
}

pub fn loss(kind: &LossKind, pred: &Tensor, target: &Tensor) -> Result<f64> {
    match kind {
        LossKind::Mse => mse_loss(pred, target),
        LossKind::WeightedCrossEntropy(w) => weighted_ce_loss(pred, target, w),
    }
}

/// Loss value and its gradient with respect to `pred`.
pub fn loss_and_grad(kind: &LossKind, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let value = loss(kind, pred, target)?;
    let mut grad = pred.zeros_like();
    match kind {
        LossKind::Mse => {
            let scale = 2.0 / pred.len() as f64;
            for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
                *g = scale * (p - t);
            }
        }
        LossKind::WeightedCrossEntropy(w) => {
            let frames = class_rows("loss_and_grad", pred)? as f64;
            for (i, (g, (p, t))) in grad
                .data_mut()
                .iter_mut()
                .zip(pred.data().iter().zip(target.data()))
                .enumerate()
            {
                // the clamp is flat below LOG_CLAMP
                if *t != 0.0 && *p > LOG_CLAMP {
                    *g = -w[i % NUM_CLASSES] * t / (p * frames);
                }
            }
        }
    }
    Ok((value, grad))
}

/// A first-order optimizer over the model's trainable tensors.
pub trait Optimizer {
    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams);
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
}

/// Adagrad: `G += g^2; theta -= lr * g / (sqrt(G) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adagrad {
    pub lr: f64,
    pub epsilon: f64,
    accumulators: Vec<Vec<f64>>,
}

impl Adagrad {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            epsilon: ADAGRAD_EPSILON,
            accumulators: Vec::new(),
        }
    }

    /// Squared-gradient sums, one vector per tensor, in update order.
    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    /// Updates a list of parameter slices in place. The list layout must not
    /// change between calls.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if self.accumulators.is_empty() {
            self.accumulators = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        assert_eq!(self.accumulators.len(), params.len(), "optimizer reused across models");
        for ((theta, g), acc) in params.iter_mut().zip(grads).zip(&mut self.accumulators) {
            assert_eq!(theta.len(), g.len());
            for ((t, &g), a) in theta.iter_mut().zip(g.iter()).zip(acc.iter_mut()) {
                *a += g * g;
                *t -= self.lr * g / (sqrt(*a) + self.epsilon);
            }
        }
    }
}

impl Optimizer for Adagrad {
    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        let g: Vec<&[f64]> = grads.trainable().into_iter().map(|(_, t)| t.data()).collect();
        let mut p: Vec<&mut [f64]> = params.trainable_mut().into_iter().map(|(_, t)| t.data_mut()).collect();
        self.step_slices(&mut p, &g);
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Halves the learning rate once the validation loss has failed to strictly
/// improve for more than `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub best: f64,
    pub bad_epochs: usize,
    pub factor: f64,
    pub patience: usize,
    pub lr: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        Self {
            best: f64::INFINITY,
            bad_epochs: 0,
            factor: PLATEAU_FACTOR,
            patience: PLATEAU_PATIENCE,
            lr,
        }
    }

    /// Records one epoch's validation loss and returns the learning rate to
    /// use next.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Validation groups of recording ids; fold `i` validates on group `i` and
/// trains on the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub groups: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn validation(&self, fold: usize) -> &[String] {
        &self.groups[fold]
    }

    pub fn train(&self, fold: usize) -> Vec<String> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, g)| g.iter().cloned())
            .collect()
    }
}

/// Shuffles the distinct recording ids with `seed` and splits them into `k`
/// near-equal groups.
pub fn make_folds(recordings: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<String> = recordings.to_vec();
    ids.sort();
    ids.dedup();
    if k == 0 || ids.len() < k {
        return Err(Error::TooFewRecordings { needed: k.max(1), got: ids.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let groups = (0..k).map(|i| ids[i * n / k..(i + 1) * n / k].to_vec()).collect();
    Ok(FoldPlan { groups })
}

/// A labelled recording before normalization and windowing.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub frames: Vec<FrameLandmarks>,
    pub labels: Vec<KeyClass>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowOptions {
    pub size: usize,
    pub step: usize,
    pub smoothing: usize,
    pub jitter_window: usize,
    /// Seed for one landmark-space augmentation of the whole recording.
    pub augment_seed: Option<u64>,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self {
            size: 128,
            step: 64,
            smoothing: 3,
            jitter_window: DEFAULT_JITTER_WINDOW,
            augment_seed: None,
        }
    }
}

/// Normalizes, smooths the labels of and windows one recording.
pub fn prepare_windows(rec: &Recording, opts: &WindowOptions) -> Result<Vec<Window>> {
    let frames = match opts.augment_seed {
        Some(seed) => augment_landmarks_seeded(&rec.frames, seed),
        None => rec.frames.clone(),
    };
    let normalized = normalize_sequence(&frames, opts.jitter_window);
    let labels = smooth_classes(&rec.labels, opts.smoothing);
    sliding_windows(&rec.id, &normalized, &labels, opts.size, opts.step)
}

/// Flattens equally long windows into frame-major `(b, n, 126)` landmarks and
/// `(b, n, 28)` targets.
pub fn batch_arrays(windows: &[&Window]) -> Result<(Vec<f64>, Tensor)> {
    let n = windows.first().ok_or(Error::EmptyDataset)?.len();
    let b = windows.len();
    let mut frames = Vec::with_capacity(b * n * FRAME_LEN);
    let mut targets = Vec::with_capacity(b * n * NUM_CLASSES);
    for w in windows {
        if w.len() != n || w.labels.len() != n || n == 0 {
            return Err(Error::ShapeMismatch {
                op: "batch_arrays",
                expected: vec![n],
                actual: vec![w.len()],
            });
        }
        for (f, l) in w.landmarks.iter().zip(&w.labels) {
            frames.extend_from_slice(&f.to_flat());
            targets.extend_from_slice(&l.0);
        }
    }
    Ok((frames, Tensor::from_vec(&[b, n, NUM_CLASSES], targets)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LEARNING_RATE,
            batch_size: 64,
            epochs: 100,
            loss: LossKind::Mse,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the lowest validation loss.
    pub best: ModelParams,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

/// Splits `order` into batches of at most `size`, folding a trailing single
/// window into the previous batch (batch norm needs two samples).
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size.max(2)).collect();
    if out.len() >= 2 && out[out.len() - 1].len() == 1 {
        out.pop();
        let start = order.len() - 1 - out[out.len() - 1].len();
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

/// Mean loss of `params` over `windows` in eval mode.
pub fn evaluate_loss(
    params: &ModelParams,
    config: &ModelConfig,
    windows: &[Window],
    loss_kind: &LossKind,
    batch_size: usize,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let (frames, target) = batch_arrays(&refs)?;
        let n = chunk[0].len();
        let (probs, _) = forward_frames(params, config, &frames, chunk.len(), n, Mode::Eval)?;
        let pred = Tensor::from_vec(target.shape(), probs)?;
        total += loss(loss_kind, &pred, &target)? * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Trains from a seeded initialization and keeps the parameters with the
/// lowest validation loss.
pub fn train_model(
    train: &[Window],
    val: &[Window],
    config: &ModelConfig,
    hyper: &TrainConfig,
) -> Result<TrainOutcome> {
    train_model_with_callback(train, val, config, hyper, |_| {})
}

/// [`train_model`] that reports each finished epoch.
pub fn train_model_with_callback(
    train: &[Window],
    val: &[Window],
    config: &ModelConfig,
    hyper: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.len() < 2 {
        return Err(Error::DegenerateBatch(train.len()));
    }
    let mut params = ModelParams::init(config, hyper.seed);
    let mut best = params.clone();
    let mut best_epoch = None;
    let mut optimizer = Adagrad::new(hyper.lr);
    let mut scheduler = PlateauScheduler::new(hyper.lr);
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let lr = optimizer.learning_rate();
        let mut train_total = 0.0;
        for batch in batches(&order, hyper.batch_size) {
            let refs: Vec<&Window> = batch.iter().map(|&i| &train[i]).collect();
            let (frames, target) = batch_arrays(&refs)?;
            let (b, n) = (refs.len(), refs[0].len());
            let mode = Mode::Train {
                dropout_seed: hyper.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(step),
            };
            step += 1;
            let (probs, cache) = forward_frames(&params, config, &frames, b, n, mode)?;
            let pred = Tensor::from_vec(target.shape(), probs)?;
            let (value, dprobs) = loss_and_grad(&hyper.loss, &pred, &target)?;
            let grads = model_backward(&params, &cache, &dprobs)?;
            params.absorb_batch_stats(&cache);
            optimizer.step(&mut params, &grads);
            train_total += value * b as f64;
        }
        let val_loss = evaluate_loss(&params, config, val, &hyper.loss, hyper.batch_size)?;
        if val_loss < scheduler.best {
            best = params.clone();
            best_epoch = Some(epoch);
        }
        let next_lr = scheduler.step(val_loss);
        optimizer.set_learning_rate(next_lr);
        let record = EpochRecord {
            epoch,
            train_loss: train_total / train.len() as f64,
            val_loss,
            lr,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { best, best_epoch, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    fn one_hot_row(c: usize) -> Vec<f64> {
        let mut v = vec![0.0; NUM_CLASSES];
        v[c] = 1.0;
        v
    }

    #[test]
    fn mse_examples() {
        let a = t(&[1, 2, 28], (0..56).map(|i| i as f64 / 56.0).collect());
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let shifted = t(&[1, 2, 28], a.data().iter().map(|v| v + 0.1).collect());
        assert!((mse_loss(&shifted, &a).unwrap() - 0.01).abs() < 1e-12);
        let p = t(&[1, 1, 28], one_hot_row(0));
        let q = t(&[1, 1, 28], one_hot_row(1));
        assert!((mse_loss(&p, &q).unwrap() - 2.0 / 28.0).abs() < 1e-15);
        assert!(mse_loss(&p, &a).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let ones = [1.0; NUM_CLASSES];
        let p = t(&[1, 1, 28], one_hot_row(5));
        assert!(weighted_ce_loss(&p, &p, &ones).unwrap().abs() < 1e-12);
        let uniform = t(&[1, 1, 28], vec![1.0 / 28.0; 28]);
        let ce = weighted_ce_loss(&uniform, &p, &ones).unwrap();
        assert!((ce - 28f64.ln()).abs() < 1e-12);
        assert!((ce - 3.3322).abs() < 1e-4);
        let twos = [2.0; NUM_CLASSES];
        assert!((weighted_ce_loss(&uniform, &p, &twos).unwrap() - 2.0 * ce).abs() < 1e-12);
    }

    #[test]
    fn adagrad_examples() {
        let mut opt = Adagrad::new(0.01);
        let mut theta = vec![0.0; 3];
        opt.step_slices(&mut [&mut theta[..]], &[&[0.0; 3]]);
        assert_eq!(theta, vec![0.0; 3]);
        assert_eq!(opt.accumulators()[0], vec![0.0; 3]);

        let mut opt = Adagrad::new(0.01);
        let mut theta = vec![0.0];
        opt.step_slices(&mut [&mut theta[..]], &[&[1.0]]);
        assert!((theta[0] + 0.01 / (1.0 + 1e-10)).abs() < 1e-15);
        let before = theta[0];
        opt.step_slices(&mut [&mut theta[..]], &[&[1.0]]);
        assert!((theta[0] - before + 0.01 / 2f64.sqrt()).abs() < 1e-12);
        assert!((theta[0] - before + 0.007071).abs() < 1e-6);
    }

    #[test]
    fn scheduler_examples() {
        let mut s = PlateauScheduler::new(0.01);
        for v in [5.0, 4.0, 3.0, 2.0, 1.0] {
            assert_eq!(s.step(v), 0.01);
        }
        let mut s = PlateauScheduler::new(0.01);
        s.step(1.0);
        let lrs: Vec<f64> = [1.0, 1.0, 1.0, 1.0].iter().map(|&v| s.step(v)).collect();
        assert_eq!(lrs, vec![0.01, 0.01, 0.01, 0.005]);
        let lrs: Vec<f64> = [1.0, 1.0, 1.0, 1.0].iter().map(|&v| s.step(v)).collect();
        assert_eq!(lrs[3], 0.0025);
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| alloc::format!("rec{i:02}")).collect()
    }

    #[test]
    fn fold_examples() {
        let plan = make_folds(&ids(5), 5, 1).unwrap();
        assert!(plan.groups.iter().all(|g| g.len() == 1));
        let plan = make_folds(&ids(10), 5, 1).unwrap();
        for i in 0..5 {
            assert_eq!(plan.validation(i).len(), 2);
            assert_eq!(plan.train(i).len(), 8);
            assert!(plan.train(i).iter().all(|r| !plan.validation(i).contains(r)));
        }
        assert_eq!(plan, make_folds(&ids(10), 5, 1).unwrap());
        assert_eq!(
            make_folds(&ids(3), 5, 1),
            Err(Error::TooFewRecordings { needed: 5, got: 3 })
        );
    }

    #[test]
    fn trailing_single_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], &[4, 5, 6, 7, 8]);
        assert_eq!(batches(&order, 3).len(), 3);
    }
}
