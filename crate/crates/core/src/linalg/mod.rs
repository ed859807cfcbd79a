//! Dense matrix kernels, symmetric eigendecomposition and the DTNS1 format.

mod eig;
pub mod io;
mod stats;
mod tensor;

pub use eig::{sym_eig, SymEig, MAX_SWEEPS};
pub use stats::{cov_to_corr, sample_mean_cov};
pub use tensor::Tensor;
