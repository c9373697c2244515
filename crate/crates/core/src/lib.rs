//! Extralonger: extra-long-horizon traffic forecasting on a unified
//! spatial-temporal representation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors and a reverse-mode tape
//! - [`data`]: dataset loading, synthesis, normalisation and windowing
//! - [`embedding`], [`attention`], [`network`]: the three-route model
//! - [`training`]: Adam, metrics, the epoch loop and checkpoints
//! - [`baselines`]: historical average and vector autoregression
//! - [`bench`]: unified versus axial attention cost measurements

pub mod attention;
pub mod baselines;
pub mod bench;
#[cfg(feature = "cli")]
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
