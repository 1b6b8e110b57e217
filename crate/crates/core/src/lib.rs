//! Vision Transformer toolkit for binary chest X-ray classification.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`tensor`]: dense `f64` tensors with reverse-mode autodiff.
//! - [`image`]: decoding, CLAHE, seeded augmentation, resizing and channel stacking.
//! - [`vit`]: the ViT classifier (patch embedding, class token, pre-norm encoder, sigmoid head).
//! - [`optim`]: Adam, RectifiedAdam, plateau and early-stopping schedulers.
//! - [`train`]: dataset manifests, the training loop, metrics and checkpoints.
//! - [`hpo`]: random-search sweeps over optimizer and learning rate.
//! - [`cli`]: the `xray-vit` command line.
//!
//! Runnable walkthroughs of each stage live in `crates/core/examples/`.

pub mod cli;
pub mod error;
mod fsutil;
pub mod hpo;
pub mod image;
pub mod kv;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
