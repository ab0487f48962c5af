//! Resonator-assisted tomography of four-mode Gaussian sideband states.
//!
//! The pipeline runs from analysis-cavity reflection ([`cavity`]) through the
//! spectral forward model ([`forward_model`]), synthetic balanced-detection
//! data ([`synthesis`]) and least-squares reconstruction ([`tomography`]) to
//! Gaussian-state diagnostics ([`analysis`]).

pub mod analysis;
pub mod cavity;
pub mod covariance;
pub mod error;
pub mod fixtures;
pub mod forward_model;
pub mod optimize;
pub mod synthesis;
pub mod tomography;

pub use error::{Error, Result};
