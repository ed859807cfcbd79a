use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{sym_eig, Tensor};

/// Elliptical family, each scaled so its covariance equals the sampler's `Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    /// Multivariate t with `nu > 2` degrees of freedom.
    StudentT { nu: f64 },
    /// Density proportional to `exp(−c·√(z′Ωz))`.
    Laplace,
}

impl Family {
    pub fn name(&self) -> String {
        match self {
            Family::Gaussian => "gaussian".into(),
            Family::StudentT { nu } => format!("student_t(nu={nu})"),
            Family::Laplace => "laplace".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticalSampler {
    family: Family,
    mean: Vec<f64>,
    covariance: Tensor,
    /// Symmetric square root of the covariance.
    root: Tensor,
}

impl EllipticalSampler {
    pub fn new(family: Family, mean: Vec<f64>, covariance: Tensor) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != [d, d] {
            return Err(dim_err("EllipticalSampler", format!("mean of length {d}, covariance {:?}", covariance.shape())));
        }
        if let Family::StudentT { nu } = family {
            if nu.is_nan() || nu <= 2.0 {
                return Err(Error::Config {
                    field: "nu".into(),
                    reason: format!("must exceed 2 for a finite covariance, got {nu}"),
                });
            }
        }
        let eig = sym_eig(&covariance)?;
        if eig.min_eigenvalue() < -1e-10 * eig.max_abs_eigenvalue().max(1.0) {
            return Err(Error::Contract(format!("covariance is not PSD (eigenvalue {:e})", eig.min_eigenvalue())));
        }
        let u = &eig.eigenvectors;
        let mut root = Tensor::zeros(&[d, d]);
        for i in 0..d {
            for j in 0..d {
                let v = (0..d).map(|k| u.get(i, k) * eig.eigenvalues[k].max(0.0).sqrt() * u.get(j, k)).sum();
                root.set(i, j, v);
            }
        }
        Ok(EllipticalSampler {
            family,
            mean,
            covariance,
            root,
        })
    }

    pub fn gaussian(mean: Vec<f64>, covariance: Tensor) -> Result<Self> {
        Self::new(Family::Gaussian, mean, covariance)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Tensor {
        &self.covariance
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.covariance.get(i, j) == 0.0))
    }

    /// Draws `n` rows.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Tensor {
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        let mut e = vec![0.0; d];
        for _ in 0..n {
            for v in e.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let radial = match self.family {
                Family::Gaussian => 1.0,
                Family::StudentT { nu } => {
                    let w: f64 = ChiSquared::new(nu).expect("nu > 2").sample(rng);
                    ((nu - 2.0) / w).sqrt()
                }
                Family::Laplace => {
                    // radius ~ Gamma(d, 1) along a uniform direction; E[r²] = d(d+1)
                    let r: f64 = Gamma::new(d as f64, 1.0).expect("d > 0").sample(rng);
                    let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                    r / norm / ((d + 1) as f64).sqrt()
                }
            };
            for i in 0..d {
                let s: f64 = (0..d).map(|j| self.root.get(i, j) * e[j]).sum();
                out.push(self.mean[i] + radial * s);
            }
        }
        Tensor::from_raw(vec![n, d], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moments_converge_for_every_family() {
        let cov = Tensor::from_rows(&[[1.5, 0.4, -0.2], [0.4, 1.0, 0.3], [-0.2, 0.3, 0.8]]).unwrap();
        let mean = vec![0.5, -1.0, 2.0];
        let n = 100_000;
        for family in [Family::Gaussian, Family::StudentT { nu: 5.0 }, Family::Laplace] {
            let s = EllipticalSampler::new(family, mean.clone(), cov.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let z = s.sample(&mut rng, n);
            for i in 0..3 {
                let col: Vec<f64> = (0..n).map(|r| z.get(r, i)).collect();
                let m = col.iter().sum::<f64>() / n as f64;
                let se = (cov.get(i, i) / n as f64).sqrt();
                assert!((m - mean[i]).abs() <= 4.0 * se, "{family:?} mean {i}: {m}");
                for j in i..3 {
                    let prods: Vec<f64> = (0..n).map(|r| (z.get(r, i) - mean[i]) * (z.get(r, j) - mean[j])).collect();
                    let c = prods.iter().sum::<f64>() / n as f64;
                    let sd = (prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / n as f64).sqrt();
                    let se = sd / (n as f64).sqrt();
                    assert!((c - cov.get(i, j)).abs() <= 4.0 * se, "{family:?} cov ({i},{j}): {c} ± {se}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(EllipticalSampler::new(Family::StudentT { nu: 2.0 }, vec![0.0], Tensor::eye(1)).is_err());
        assert!(EllipticalSampler::gaussian(vec![0.0, 0.0], Tensor::eye(3)).is_err());
        let not_psd = Tensor::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(EllipticalSampler::gaussian(vec![0.0, 0.0], not_psd).is_err());
    }

    #[test]
    fn root_squares_to_covariance() {
        let cov = Tensor::from_rows(&[[2.0, 0.5], [0.5, 1.0]]).unwrap();
        let s = EllipticalSampler::gaussian(vec![0.0, 0.0], cov.clone()).unwrap();
        assert!(s.root.matmul(&s.root).unwrap().max_abs_diff(&cov) < 1e-12);
        assert!(!s.is_diagonal());
        assert!(EllipticalSampler::gaussian(vec![0.0; 2], Tensor::eye(2)).unwrap().is_diagonal());
    }
}
