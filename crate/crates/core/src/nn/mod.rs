//! Numerical kernels for the convolutional-recurrent classifier.
//!
//! Everything here is written out by hand: forward and backward passes for
//! the two 3D convolutions, batch norm, dropout, two GRU layers, two dense
//! layers and the softmax head. No autodiff graph, only the layers this
//! architecture needs.

use alloc::format;
use alloc::string::String;

use crate::labels::NUM_CLASSES;
use crate::{Error, Result};

mod conv;
mod gru;
mod layers;
pub(crate) mod linalg;
mod model;
mod tensor;

pub use conv::{
    conv3d_forward, conv3d_second_forward, conv_output_extent, CONV1_KERNEL, CONV1_PADDING,
    CONV1_STRIDE, CONV2_KERNEL, GROUPS, PATCH_LEN,
};
pub use gru::{gru_forward, gru_forward_with_state, GruParams};
pub use layers::{
    batchnorm_forward, dropout_forward, softmax, BatchNormParams, Phase, BN_EPSILON, BN_MOMENTUM,
};
pub use model::{
    model_backward, model_forward, model_forward_with_cache, DenseParams, ForwardCache, Mode,
    ModelParams,
};
pub(crate) use model::{forward_frames, FramePipeline};
pub use tensor::Tensor;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub conv1_channels: usize,
    /// Feature width handed to the first GRU.
    pub conv2_channels: usize,
    pub gru_hidden: usize,
    pub fc_hidden: usize,
    pub dropout: f64,
    pub window: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv1_channels: 32,
            conv2_channels: 64,
            gru_hidden: 128,
            fc_hidden: 64,
            dropout: 0.2,
            window: 128,
            num_classes: NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.conv1_channels,
            self.conv2_channels,
            self.gru_hidden,
            self.fc_hidden,
            self.window,
        ];
        if extents.contains(&0) {
            return Err(Error::InvalidConfig(String::from("all layer widths must be >= 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Stable textual form, used for config hashing.
    pub fn canonical(&self) -> String {
        format!(
            "conv1_channels={}\nconv2_channels={}\ngru_hidden={}\nfc_hidden={}\ndropout={:?}\nwindow={}\nnum_classes={}\n",
            self.conv1_channels,
            self.conv2_channels,
            self.gru_hidden,
            self.fc_hidden,
            self.dropout,
            self.window,
            self.num_classes
        )
    }
}
