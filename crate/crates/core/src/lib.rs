//! Galaxy ellipticity regression with Monte-Carlo-dropout uncertainty.
//!
//! The crate covers the full pipeline: parametric scene simulation, moment
//! measurement, the multi-view convolutional shape network and its two
//! heads, the two-stage training protocol, posterior sampling with the
//! aleatoric/epistemic covariance split, evaluation and persistence.

pub mod bayes;
pub mod config;
pub mod ellipticity;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod pipeline;
pub mod protocol;
pub mod report;
pub mod simulator;
pub mod store;

pub use error::{Error, Result};
