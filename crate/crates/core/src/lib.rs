//! Interference-aware analog beam learning with a trainable power-predicting twin.
//!
//! The crate is organised bottom-up:
//!
//! - [`array`]: uniform linear array responses, geometric multipath channels and seeded scenarios.
//! - [`beamforming`]: quantized phase codebooks, unit-norm combiners, exact power/SINR oracles
//!   and a brute-force optimum search.
//! - [`environment`]: the measurement-only contract shared by the real (scenario-backed)
//!   environment and the twin.
//! - [`nn`]: a small dense-network engine (batch norm, ReLU, scaled tanh, MSE, Adam).
//! - [`twin`]: quadratic-form and dense power predictors and their supervised training.
//! - [`agent`]: the actor-critic beam learner with binary SINR-comparison reward.
//! - [`orchestrator`]: real-only baseline and the twin-assisted acquire/train/virtual/reacquire loop.
//! - [`config`] and [`aggregate`]: experiment configuration and multi-seed aggregation.

pub mod agent;
pub mod aggregate;
pub mod array;
pub mod beamforming;
pub mod config;
pub mod environment;
pub mod error;
pub mod nn;
pub mod orchestrator;
pub mod twin;

pub use error::{Error, Result};

/// Complex baseband sample type used throughout.
pub type C64 = num_complex::Complex<f64>;

/// Converts a linear power ratio to decibels.
pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Converts decibels to a linear power ratio.
pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
