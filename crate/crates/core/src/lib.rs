//! Kicked complex Ginzburg–Landau dynamics on a bounded interval: spectral
//! discretisation, the deterministic flow, the randomly kicked chain,
//! coupling constructions and ergodicity diagnostics.

pub mod config;
pub mod coupling;
pub mod ergodicity;
pub mod error;
pub mod flow;
pub mod kicks;
pub mod quadrature;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod suites;

pub use error::{Error, Result};
pub use spectral::{EnergyParams, Grid, GridSpec, SpectralField};
