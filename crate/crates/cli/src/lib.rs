//! Configuration-driven experiment runner for robust transmit design:
//! trials over a radius sweep, certificates, worst-case evaluation and
//! aggregate tables.

pub mod app;
pub mod certify;
pub mod config;
pub mod error;
pub mod plotdata;
pub mod records;
pub mod runner;

pub use config::{Algorithm, ExperimentConfig, Overrides};
pub use error::{CliError, Result};
