use std::collections::HashMap;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{sym_eig, Tensor};

/// Below this `|det|` an affine map counts as singular.
pub const DET_TOLERANCE: f64 = 1e-12;

/// Shannon entropy (nats) of the empirical distribution of rows, where two
/// rows are equal iff their `f64` bit patterns are equal.
pub fn empirical_entropy(values: &Tensor) -> f64 {
    let n = values.rows();
    if n == 0 {
        return 0.0;
    }
    let mut counts: HashMap<Vec<u64>, usize> = HashMap::new();
    for r in 0..n {
        *counts.entry(values.row(r).iter().map(|v| v.to_bits()).collect()).or_default() += 1;
    }
    let mut freq: Vec<usize> = counts.into_values().collect();
    freq.sort_unstable();
    // ln n − (1/n) Σ c ln c, which is exactly ln n when all rows differ
    let n = n as f64;
    n.ln() - freq.iter().map(|&c| c as f64 * (c as f64).ln()).sum::<f64>() / n
}

/// `|det a|` from `det(a)² = Π eig(a′a)`.
pub fn abs_determinant(a: &Tensor) -> Result<f64> {
    if a.rank() != 2 || a.rows() != a.cols() {
        return Err(dim_err("abs_determinant", format!("{:?} is not square", a.shape())));
    }
    let gram = a.transpose().matmul(a)?;
    let eig = sym_eig(&gram)?;
    Ok(eig.eigenvalues.iter().map(|&l| l.max(0.0)).product::<f64>().sqrt())
}

/// Row-wise `y = x a + b`.
pub fn apply_affine(values: &Tensor, a: &Tensor, b: &[f64]) -> Result<Tensor> {
    values.as_matrix().matmul(a)?.add_row(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyCheck {
    pub h_before: f64,
    pub h_after: f64,
    pub abs_det: f64,
}

impl EntropyCheck {
    pub fn invariant(&self) -> bool {
        self.h_before == self.h_after
    }
}

/// Empirical entropy of `values` before and after `x ↦ x a + b`.
///
/// A map with `|det a| ≤` [`DET_TOLERANCE`] is rejected with
/// [`Error::NotInvertible`].
pub fn entropy_invariance_check(values: &Tensor, a: &Tensor, b: &[f64]) -> Result<EntropyCheck> {
    let d = values.cols();
    if a.shape() != [d, d] || b.len() != d {
        return Err(dim_err("entropy_invariance_check", format!("map {:?} + {} for {d} columns", a.shape(), b.len())));
    }
    let abs_det = abs_determinant(a)?;
    if abs_det <= DET_TOLERANCE {
        return Err(Error::NotInvertible { det: abs_det });
    }
    Ok(EntropyCheck {
        h_before: empirical_entropy(values),
        h_after: empirical_entropy(&apply_affine(values, a, b)?),
        abs_det,
    })
}
