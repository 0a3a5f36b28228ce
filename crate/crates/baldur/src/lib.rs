//! Multi-view sparse Bayesian classification via mean-field variational
//! inference: double-ARD sparsity over features and latent factors, per-view
//! primal/dual formulations for wide data, a Jaakkola-bound logistic output,
//! and an ELBO-verified coordinate-ascent fit loop.

pub mod data;
pub mod elbo;
pub mod engine;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod predict;
pub mod prune;
pub mod state;
pub mod synth;

pub use error::{BaldurError, Result};
