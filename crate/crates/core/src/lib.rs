//! Projection VAE: a variational autoencoder whose encoder mean passes
//! through a whitening layer (rotation by the eigenvectors of the batch
//! covariance, then per-axis scaling) so latent coordinates have zero
//! marginal sample covariance, plus a Monte-Carlo harness that checks the
//! Stein-identity entanglement results numerically.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod projection;
pub mod verify;

pub use error::{Error, Result};
