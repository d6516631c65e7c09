//! Regression-based voltage estimation and centralized volt-var control for
//! radial, unbalanced distribution feeders.

pub mod error;
pub mod estimator;
pub mod feeder;
pub mod harness;
pub mod optimizer;
pub mod powerflow;
pub mod profiles;
pub mod regulator;
pub mod scenario;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
