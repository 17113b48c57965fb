//! Simulation and processing toolkit for FMCW millimetre-wave radar point clouds.

pub mod aoa;
pub mod cloud;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod export;
pub mod pipeline;
pub mod radar;
pub mod scene;
pub mod simulator;

pub use error::{Error, Result};
