//! Bayesian forecasting of post-disruption travel times on a metro line.

pub mod dists;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod model;
mod par;
pub mod predict;
pub mod quad;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
