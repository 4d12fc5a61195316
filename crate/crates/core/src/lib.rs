//! Token-sharing transformer for lightweight monocular depth estimation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense N-d tensors with reverse-mode autodiff.
//! * [`nn`]: inverted residual blocks, batch-normalised cross-attention, depthwise FFN.
//! * [`model`]: encoder, token-sharing connection module and decoder.
//! * [`loss_metrics`]: scale-invariant log loss and depth evaluation metrics.
//! * [`data`]: synthetic scenes, augmentation and on-disk formats.
//! * [`profiler`]: parameter/MACs accounting and the FPS harness.
//! * [`train`]: optimiser, learning-rate schedule, checkpoints, training and evaluation loops.

pub mod data;
pub mod error;
pub mod kv;
pub mod loss_metrics;
pub mod model;
pub mod nn;
pub mod profiler;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
