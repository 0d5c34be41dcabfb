//! BCDU-Net: a U-Net whose skip connections are fused by a bidirectional
//! ConvLSTM and whose bottleneck is a stack of densely connected
//! convolutional blocks, together with the training loop, segmentation
//! metrics, and data preparation around it.
//!
//! Everything runs on the small reverse-mode engine in [`tensor`].

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Padding, Real, Tensor, Var};
