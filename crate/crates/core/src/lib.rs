//! Keystroke identification from two-hand landmark streams.
//!
//! The pipeline has two stages. Stage one turns raw per-frame hand landmarks
//! into a shift- and scale-normalized representation ([`landmarks`]). Stage two
//! is a convolutional-recurrent sequence-to-sequence classifier ([`nn`]) that
//! maps every frame to a distribution over 28 classes: idle, `a`..`z` and space.
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`landmarks`] | landmark types, reference point / scale, jitter smoothing, augmentation |
//! | [`labels`] | class taxonomy, one-hot, class weights, temporal label smoothing, windows |
//! | [`nn`] | tensors and the C-RNN layers with forward and backward passes |
//! | [`train`] | losses, Adagrad, plateau scheduler, folds, training loop |
//! | [`stream`] | causal frame-by-frame inference, keystroke events, latency stats |
//! | [`metrics`] | confusion matrix, per-class metrics, Levenshtein / NLD |
//! | [`synth`] | deterministic synthetic typing sessions |
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints,
//! clocks and the command line live in the companion `keystroke` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod error;
pub mod labels;
pub mod landmarks;
pub mod metrics;
pub mod nn;
pub mod stream;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use labels::{KeyClass, LabelVector, NUM_CLASSES};
pub use landmarks::{FrameLandmarks, HandLandmarks};
pub use nn::{ModelConfig, ModelParams, Tensor};
