//! Variational auto-encoding binary classifiers (V-ABC).
//!
//! A V-ABC model is a VAE trained on two folds: unlabeled data it should
//! learn to generate, and unwanted examples whose reconstruction it is
//! penalized for. This crate contains everything needed to train, sample and
//! analyze such models on CPU:
//!
//! - [`tensor`], [`autodiff`], [`optim`]: dense tensors, reverse-mode
//!   differentiation, Adam
//! - [`datasets`]: two-moons and MNIST folds, the unwanted/unlabeled split,
//!   balanced batching
//! - [`models`]: encoder/decoder, loss terms, sampling, checkpoints
//! - [`training`]: annealed training loops for V-ABC and the VAE baseline
//! - [`evaluation`]: gated evaluation classifiers and generation metrics
//! - [`artifacts`]: gradient fields, latent manifolds, reconstructions and
//!   latent ellipses as CSV/PNG
//! - [`config`]: declarative run configuration with presets

pub mod artifacts;
pub mod autodiff;
pub mod config;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod fmt;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
