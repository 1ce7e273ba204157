//! Desk-scale laboratory for compound GNSS jamming classification.
//!
//! - [`signal`]: calibrated jamming primitives, compound mixtures and AWGN.
//! - [`spectral`]: STFT and Welch features rendered as images.
//! - [`model`]: the SKANet classifier and ACB kernel fusion.
//! - [`training`]: loss, Adam, cosine schedule and the epoch loop.
//! - [`metrics`]: confusion matrices, per-class scores and FLOPs.
//! - [`dataset`]: deterministic grid generation and binary file formats.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod signal;
pub mod training;
pub mod spectral;

pub use error::{Error, Result};
