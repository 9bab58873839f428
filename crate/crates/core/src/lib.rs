// SPDX-License-Identifier: MIT OR Apache-2.0

//! Online changepoint detection for low-dimensional multivariate streams.
//!
//! The core is a Bayesian run-length filter ([`engine::BocdEngine`]) driven by
//! conjugate Gaussian models: independent per-dimension Normal-Gamma priors
//! (factorized) or a joint Normal-Inverse-Wishart prior (multivariate). Around
//! it sit preprocessing, a prediction-error detector, margin-based scoring and
//! grid search, synthetic data generation, file formats and a CLI.

pub mod cli;
pub mod conjugate;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod math;
pub mod predictive;
pub mod preprocess;

pub use conjugate::{NiwParams, NormalGammaParams, PredictiveLogDensity};
pub use engine::{BocdEngine, Detection, EngineConfig, HazardSpec, ModelSpec, RunLengthPosterior, Scheme};
pub use error::{Error, Result};
pub use evaluation::{ChangepointSet, EvalReport};
pub use preprocess::Observation;
