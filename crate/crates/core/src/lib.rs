//! Self-supervised masked latent prediction for multi-antenna IQ signals.
//!
//! The pipeline reshapes raw `(I/Q, antenna, time)` windows into a square
//! antenna-time grid, hides structured regions of that grid, and trains a
//! sparse convolutional student encoder plus a light depthwise-separable
//! predictor to regress the latent features an EMA teacher produces for the
//! hidden regions. The frozen student is then evaluated with few-shot linear
//! probes and k-NN.
//!
//! Module map:
//!
//! - [`grid`]: IQ tensors, segmentation, unit-max normalization, antenna upsampling
//! - [`masks`]: random / antenna / time / multi-block latent masks and resolution changes
//! - [`backbone`]: layers, encoder, predictor, sparse forward and backward passes, checkpoints
//! - [`jepa`]: masked L2 loss, schedules, AdamW, EMA teacher, the training loop
//! - [`synthdata`]: labelled synthetic multi-antenna corpora and the dataset file format
//! - [`eval`]: embedding extraction, linear probe, k-NN, few-shot protocol
//! - [`cli`]: command implementations used by the `iqjepa` binary

pub mod backbone;
pub mod cli;
pub mod error;
pub mod eval;
pub mod grid;
pub mod jepa;
pub mod masks;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor4};
