//! Motion-grouping video object segmentation trained from optical flow.

pub mod ablation;
pub mod appearance;
pub mod config;
pub mod error;
pub mod eval;
pub mod motion;
pub mod net;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod trainer;
pub mod tuner;

pub use error::{Error, Result};
