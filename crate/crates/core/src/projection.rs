//! Whitening layer for the encoder mean.
//!
//! Given encoder means `g` (rows) with mean `μ` and biased covariance
//! `Σ = U D U'`, the layer maps each row to `(g − μ) L + μ` with
//! `L = U (D + εI)^{-1/2}`. In column form this is `L'(g − μ) + μ`: a
//! rotation onto the principal axes followed by per-axis scaling, which
//! leaves the mean in place and makes the sample covariance
//! `diag(d_k / (d_k + ε))`.
//!
//! [`ProjectionState`] holds frozen statistics for evaluation;
//! [`project_on_tape`] recomputes them from a minibatch on an autodiff tape
//! so training backpropagates through the mean, the covariance and the
//! eigendecomposition.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{sample_mean_cov, sym_eig, SymEig, Tensor};

/// `ε` used by [`EpsilonRule::Auto`] for rank-deficient covariances.
pub const AUTO_EPSILON: f64 = 1e-6;
/// [`EpsilonRule::Auto`] treats `Σ` as full rank when its smallest
/// eigenvalue exceeds this fraction of the largest.
pub const AUTO_RANK_RATIO: f64 = 1e-8;
/// Running-average momentum used when none is configured.
pub const DEFAULT_MOMENTUM: f64 = 0.99;

/// How `ε` is chosen from the covariance spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    /// `0` when full rank, [`AUTO_EPSILON`] otherwise.
    Auto,
    Fixed(f64),
}

impl EpsilonRule {
    pub fn resolve(self, eigenvalues: &[f64]) -> f64 {
        match self {
            EpsilonRule::Fixed(e) => e,
            EpsilonRule::Auto => {
                let max = eigenvalues.iter().copied().fold(0.0f64, f64::max);
                let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
                if max > 0.0 && min > AUTO_RANK_RATIO * max {
                    0.0
                } else {
                    AUTO_EPSILON
                }
            }
        }
    }
}

/// Where the statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StatsMode {
    /// Each fit replaces the statistics.
    Batch,
    /// Each update blends `stat ← m·stat_old + (1−m)·stat_batch`.
    Running { momentum: f64 },
}

/// Per-axis scales `(d_k + ε)^{-1/2}`; negative rounding noise in `d_k` is
/// clamped to zero first.
fn axis_scales(eigenvalues: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    eigenvalues
        .iter()
        .map(|&d| {
            let v = d.max(0.0) + epsilon;
            if v > 0.0 {
                Ok(1.0 / v.sqrt())
            } else {
                Err(Error::Contract(format!(
                    "covariance is singular (eigenvalue {d:e}) and epsilon is {epsilon}"
                )))
            }
        })
        .collect()
}

/// Frozen whitening statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionState {
    mu_g: Tensor,
    sigma_g: Tensor,
    eig: SymEig,
    epsilon_rule: EpsilonRule,
    epsilon: f64,
    l: Tensor,
    mode: StatsMode,
}

impl ProjectionState {
    /// Fits statistics to the rows of `gs` (`n×d`, `n ≥ 2`).
    pub fn fit(gs: &Tensor, epsilon: EpsilonRule, mode: StatsMode) -> Result<Self> {
        let (mu, sigma) = sample_mean_cov(gs)?;
        Self::from_stats(mu, sigma, epsilon, mode)
    }

    /// Builds the state from a given mean and covariance.
    pub fn from_stats(mu: Tensor, sigma: Tensor, epsilon: EpsilonRule, mode: StatsMode) -> Result<Self> {
        let d = mu.len();
        if sigma.shape() != [d, d] {
            return Err(dim_err(
                "ProjectionState::from_stats",
                format!("mean of length {d} with covariance {:?}", sigma.shape()),
            ));
        }
        let eig = sym_eig(&sigma)?;
        let eps = epsilon.resolve(&eig.eigenvalues);
        let mut state = ProjectionState {
            mu_g: mu.reshape(&[d])?,
            sigma_g: sigma,
            eig,
            epsilon_rule: epsilon,
            epsilon: eps,
            l: Tensor::zeros(&[d, d]),
            mode,
        };
        state.assemble()?;
        Ok(state)
    }

    fn assemble(&mut self) -> Result<()> {
        let scales = axis_scales(&self.eig.eigenvalues, self.epsilon)?;
        let mut l = self.eig.eigenvectors.clone();
        for i in 0..self.dim() {
            for (j, s) in scales.iter().enumerate() {
                l.set(i, j, l.get(i, j) * s);
            }
        }
        self.l = l;
        Ok(())
    }

    /// Reorders and flips the principal axes to follow `reference` (a `d×d`
    /// matrix of unit columns), as chosen by [`basis_alignment`].
    pub fn align_to(&mut self, reference: &Tensor) -> Result<()> {
        let d = self.dim();
        if reference.shape() != [d, d] {
            return Err(dim_err("ProjectionState::align_to", format!("reference {:?} for dimension {d}", reference.shape())));
        }
        let (perm, signs) = basis_alignment(&self.eig.eigenvectors, reference);
        let old = self.eig.clone();
        for (j, (&p, &s)) in perm.iter().zip(&signs).enumerate() {
            self.eig.eigenvalues[j] = old.eigenvalues[p];
            for i in 0..d {
                self.eig.eigenvectors.set(i, j, s * old.eigenvectors.get(i, p));
            }
        }
        self.assemble()
    }

    /// Folds a new batch into the statistics according to the mode.
    pub fn update(&mut self, gs: &Tensor) -> Result<()> {
        let (mu, sigma) = sample_mean_cov(gs)?;
        self.update_with_stats(&mu, &sigma)
    }

    /// [`ProjectionState::update`] with precomputed batch statistics. The
    /// new principal axes are aligned to the previous ones.
    pub fn update_with_stats(&mut self, mu: &Tensor, sigma: &Tensor) -> Result<()> {
        if mu.len() != self.dim() || sigma.shape() != self.sigma_g.shape() {
            return Err(dim_err("ProjectionState::update", "batch statistics of wrong size"));
        }
        let (mu, sigma) = match self.mode {
            StatsMode::Batch => (mu.reshape(&[self.dim()])?, sigma.clone()),
            StatsMode::Running { momentum: m } => {
                let blend = |old: &Tensor, new: &Tensor| {
                    old.zip_map(&new.reshape(old.shape())?, |o, n| m * o + (1.0 - m) * n)
                };
                (blend(&self.mu_g, mu)?, blend(&self.sigma_g, sigma)?)
            }
        };
        let previous = self.eig.eigenvectors.clone();
        *self = Self::from_stats(mu, sigma, self.epsilon_rule, self.mode)?;
        self.align_to(&previous)
    }

    pub fn dim(&self) -> usize {
        self.mu_g.len()
    }

    pub fn mean(&self) -> &Tensor {
        &self.mu_g
    }

    pub fn covariance(&self) -> &Tensor {
        &self.sigma_g
    }

    pub fn eig(&self) -> &SymEig {
        &self.eig
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn epsilon_rule(&self) -> EpsilonRule {
        self.epsilon_rule
    }

    pub fn mode(&self) -> StatsMode {
        self.mode
    }

    /// `L = U (D + εI)^{-1/2}`.
    pub fn l(&self) -> &Tensor {
        &self.l
    }

    /// Maps each row `g` to `(g − μ) L + μ`.
    pub fn apply(&self, g: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        if g.cols() != d {
            return Err(dim_err(
                "projection apply",
                format!("{} columns, state has dimension {d}", g.cols()),
            ));
        }
        let mu = self.mu_g.data();
        let centered = g.as_matrix().add_row(&mu.iter().map(|m| -m).collect::<Vec<_>>())?;
        centered.matmul(&self.l)?.add_row(mu)
    }

    /// Inverse of [`ProjectionState::apply`]: `(y − μ) L⁻¹ + μ` with
    /// `L⁻¹ = (D + εI)^{1/2} U'`.
    pub fn invert(&self, y: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        if y.cols() != d {
            return Err(dim_err("projection invert", format!("{} columns, expected {d}", y.cols())));
        }
        let mut inv = self.eig.eigenvectors.transpose();
        for (k, &lam) in self.eig.eigenvalues.iter().enumerate() {
            let s = (lam.max(0.0) + self.epsilon).sqrt();
            for j in 0..d {
                inv.set(k, j, inv.get(k, j) * s);
            }
        }
        let mu = self.mu_g.data();
        let centered = y.as_matrix().add_row(&mu.iter().map(|m| -m).collect::<Vec<_>>())?;
        centered.matmul(&inv)?.add_row(mu)
    }

    /// Covariance of the projected means along each axis, `d_k / (d_k + ε)`.
    pub fn projected_variance(&self) -> Vec<f64> {
        self.eig
            .eigenvalues
            .iter()
            .map(|&d| {
                let d = d.max(0.0);
                if d == 0.0 {
                    0.0
                } else {
                    d / (d + self.epsilon)
                }
            })
            .collect()
    }

    /// The layer as a row-form affine map `y = x A + b`.
    pub fn affine(&self) -> (Tensor, Vec<f64>) {
        let mu = self.mu_g.data();
        let d = self.dim();
        let b = (0..d)
            .map(|j| mu[j] - (0..d).map(|i| mu[i] * self.l.get(i, j)).sum::<f64>())
            .collect();
        (self.l.clone(), b)
    }
}

/// Greedy matching of the columns of `vectors` to those of `reference` by
/// largest `|overlap|`. Output column `j` of the aligned basis is
/// `signs[j] · vectors[:, perm[j]]`, with the sign making its overlap with
/// reference column `j` non-negative.
pub fn basis_alignment(vectors: &Tensor, reference: &Tensor) -> (Vec<usize>, Vec<f64>) {
    let d = vectors.cols();
    let overlap = reference.transpose().matmul(vectors).expect("square bases of equal size");
    let mut perm = vec![usize::MAX; d];
    let mut signs = vec![1.0; d];
    let mut used = vec![false; d];
    for _ in 0..d {
        let mut best = (0.0f64, usize::MAX, usize::MAX);
        for i in (0..d).filter(|&i| perm[i] == usize::MAX) {
            for j in (0..d).filter(|&j| !used[j]) {
                let v = overlap.get(i, j).abs();
                if best.1 == usize::MAX || v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        let (_, i, j) = best;
        perm[i] = j;
        used[j] = true;
        signs[i] = if overlap.get(i, j) < 0.0 { -1.0 } else { 1.0 };
    }
    (perm, signs)
}

/// Batch statistics seen by [`project_on_tape`].
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Tensor,
    pub covariance: Tensor,
    pub epsilon: f64,
}

/// Whitens the minibatch `g` (`n×d`) on the tape.
///
/// With `stop_gradient` the mean, covariance and eigendecomposition are
/// treated as constants and only the direct path through `g` carries
/// gradient. With a `reference` basis the principal axes are reordered and
/// flipped to follow it (see [`basis_alignment`]).
pub fn project_on_tape(
    tape: &mut Tape,
    g: Var,
    epsilon: EpsilonRule,
    stop_gradient: bool,
    reference: Option<&Tensor>,
) -> Result<(Var, BatchStats)> {
    let n = tape.value(g).rows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mu = tape.mean_rows(g);
    let neg_mu = tape.scale(mu, -1.0);
    let centered = tape.add_row(g, neg_mu)?;
    let ct = tape.transpose(centered);
    let scatter = tape.matmul(ct, centered)?;
    let mut cov = tape.scale(scatter, 1.0 / n as f64);
    let mut mu_used = mu;
    let mut centered_used = centered;
    if stop_gradient {
        cov = tape.detach(cov);
        mu_used = tape.detach(mu);
        let neg = tape.scale(mu_used, -1.0);
        centered_used = tape.add_row(g, neg)?;
    }
    let (mut values, mut vectors) = tape.sym_eig(cov)?;
    if let Some(reference) = reference {
        let d = tape.value(g).cols();
        if reference.shape() != [d, d] {
            return Err(dim_err("project_on_tape", format!("reference {:?} for dimension {d}", reference.shape())));
        }
        let (perm, signs) = basis_alignment(tape.value(vectors), reference);
        let mut signed = Tensor::zeros(&[d, d]);
        let mut plain = Tensor::zeros(&[d, d]);
        for (j, (&p, &s)) in perm.iter().zip(&signs).enumerate() {
            signed.set(p, j, s);
            plain.set(p, j, 1.0);
        }
        let signed = tape.constant(signed);
        let plain = tape.constant(plain);
        vectors = tape.matmul(vectors, signed)?;
        values = tape.matmul(values, plain)?;
    }
    let lambda = tape.value(values).data().to_vec();
    let eps = epsilon.resolve(&lambda);
    // same precondition as the frozen path
    axis_scales(&lambda, eps)?;
    let shifted = tape.add_scalar(values, eps);
    let scales = tape.powf(shifted, -0.5);
    let l = tape.mul_row(vectors, scales)?;
    let rotated = tape.matmul(centered_used, l)?;
    let out = tape.add_row(rotated, mu_used)?;
    let stats = BatchStats {
        mean: tape.value(mu).reshape(&[lambda.len()])?,
        covariance: tape.value(cov).clone(),
        epsilon: eps,
    };
    Ok((out, stats))
}
