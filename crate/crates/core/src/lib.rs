//! One-versus-all invertible networks for class-incremental learning.
//!
//! Each class gets its own volume-preserving coupling network, trained only
//! on that class's samples to map them close to the origin. Prediction picks
//! the class whose network yields the smallest squared output norm, which is
//! the same as the highest exact Gaussian log-likelihood. Networks are frozen
//! once trained, so learning a new class never touches the old ones.
//!
//! Modules, bottom-up:
//!
//! - [`numkit`]: dense kernels, SplitMix64, uniform initialization
//! - [`flowcore`]: coupling blocks, exact inverse, likelihood, gradients
//! - [`optim`]: Adam, plateau scheduler, per-class training loop
//! - [`continual`]: expert registry, prediction, prototypes, evaluation, model files
//! - [`dataio`]: MNIST IDX and feature-file readers, normalization, class streams
//! - [`cli`]: configuration and the commands behind the `ova-inn` binary

pub mod cli;
mod codec;
pub mod continual;
pub mod dataio;
pub mod error;
pub mod flowcore;
pub mod numkit;
pub mod optim;

pub use error::{Error, Result};

/// Class label.
pub type ClassId = u32;
