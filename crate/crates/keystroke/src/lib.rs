//! File formats, checkpoints, frame sources and the command-line front end
//! for `keystroke-core`.
//!
//! | module       | contents                                            |
//! |--------------|-----------------------------------------------------|
//! | `csvio`      | landmark, keylog and label CSV files                |
//! | `checkpoint` | binary parameter checkpoints with config hash       |
//! | `corpus`     | dataset directories and `manifest.json`             |
//! | `wire`       | length-prefixed binary frame records                |
//! | `config`     | `key=value` run configuration files                 |
//! | `evaluate`   | metrics, confusion and NLD reports                  |
//! | `live`       | threaded frame sources for streaming inference      |
//! | `commands`   | the `synth`, `train`, `eval`, `stream`, `bench` CLI |

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod csvio;
mod error;
pub mod evaluate;
pub mod live;
pub mod wire;

pub use error::{Error, Result};
