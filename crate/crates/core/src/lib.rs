//! Robust transmit covariance design for the multiuser MISO downlink.
//!
//! The design maximizes a system utility of the worst-case user rates when
//! every channel estimate is only known up to a spherical error ball. It
//! alternates between a semidefinite program over the covariances and a
//! per-user bisection on the SINR targets, and comes with exact and Monte
//! Carlo worst-case evaluators.

pub mod conic;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod wcum;

pub use error::{Error, Result};
pub use model::{ChannelSet, CovarianceSet, SystemConfig, UtilityKind};
