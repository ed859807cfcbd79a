use crate::error::{dim_err, Error, Result};
use crate::linalg::Tensor;

/// Sweep limit for the cyclic Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;
/// Convergence when the off-diagonal Frobenius norm drops below this
/// fraction of the input's Frobenius norm.
pub const REL_TOLERANCE: f64 = 1e-12;
/// Largest tolerated `|A - A'|` entry, relative to `max(1, |A|_max)`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Eigendecomposition `A = U diag(λ) U'` of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order. Column `j` of `eigenvectors`
/// belongs to `eigenvalues[j]`, and its first entry of largest magnitude is
/// non-negative, so the factorization is reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Tensor,
}

impl SymEig {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(λ) U'`.
    pub fn reconstruct(&self) -> Tensor {
        let n = self.dim();
        let u = &self.eigenvectors;
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += u.get(i, k) * self.eigenvalues[k] * u.get(j, k);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    pub fn determinant(&self) -> f64 {
        self.eigenvalues.iter().product()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(A + A') / 2` first. Fails with
/// [`Error::Convergence`] if the off-diagonal mass has not fallen below
/// `REL_TOLERANCE * |A|_F` after [`MAX_SWEEPS`] sweeps.
pub fn sym_eig(a: &Tensor) -> Result<SymEig> {
    if a.rank() != 2 || a.rows() != a.cols() {
        return Err(dim_err("sym_eig", format!("input shape {:?} is not square", a.shape())));
    }
    let n = a.rows();
    let asym = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max((a.get(i, j) - a.get(j, i)).abs()));
    if asym > SYMMETRY_TOLERANCE * a.max_abs().max(1.0) {
        return Err(Error::Contract(format!(
            "sym_eig input is not symmetric (max |A - A'| = {asym:e})"
        )));
    }

    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a.get(i, j) + a.get(j, i));
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = REL_TOLERANCE * norm;
    let off_norm = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_norm(&m) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let residual = off_norm(&m);
        if residual > threshold {
            return Err(Error::Convergence {
                sweeps: MAX_SWEEPS,
                residual,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut u = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        let lead = (0..n).fold(0, |best, r| {
            if v[r * n + src].abs() > v[best * n + src].abs() {
                r
            } else {
                best
            }
        });
        let sign = if v[lead * n + src] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            u.set(r, col, sign * v[r * n + src]);
        }
    }
    Ok(SymEig {
        eigenvalues,
        eigenvectors: u,
    })
}
