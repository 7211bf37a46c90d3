//! Collapse spectroscopy for linear Gaussian β-VAEs.
//!
//! Trains linear VAEs to equilibrium over a grid of normalized temperatures
//! `T = β σ²_dec / V`, measures per-latent posterior observables, fits
//! collapse thresholds, measures truncation utilities and compares both with
//! the normalized PCA spectrum `λ_k / V`.

pub mod data;
pub mod error;
pub mod model;
pub mod report;
pub mod scan;
pub mod spectra;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
