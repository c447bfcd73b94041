//! Federated optimization of compositional pairwise risks.
//!
//! A deterministic round-based simulator for FedX1 (linear outer function)
//! and FedX2 (nonlinear outer function, u-tracking and momentum), with exact
//! objective and gradient oracles, AUC / partial AUC metrics, local and
//! centralized baselines, and a config-driven harness.

pub mod algorithms;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod trace;

pub use error::{Error, Result};
