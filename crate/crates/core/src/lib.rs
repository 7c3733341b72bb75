//! Bayesian joint model for left-censored day-15/day-42 MRD responses and a finite
//! Gaussian mixture over drug-sensitivity (log10 LC50) profiles.
//!
//! The crate is organized bottom-up:
//!
//! * [`model`] – domain types, design matrix, likelihood and prior terms.
//! * [`sampler`] – conjugate Gibbs kernels and the chain driver.
//! * [`clustering`] – k-means elbow analysis, posterior similarity and Binder partitions.
//! * [`diagnostics`] – ESS, split-R̂ and posterior summaries.
//! * [`simulate`] – generative simulator and simulation-based calibration.
//! * [`io`] and [`cli`] – file formats and the `mrdmix` command line.

pub mod cli;
pub mod clustering;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod model;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
