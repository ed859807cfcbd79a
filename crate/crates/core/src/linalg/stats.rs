use crate::error::{Error, Result};
use crate::linalg::Tensor;

/// Column mean and biased (divisor `n`) covariance of the rows of `rows`.
///
/// The covariance is accumulated on the upper triangle and mirrored, so it
/// is exactly symmetric.
pub fn sample_mean_cov(rows: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, d) = (rows.rows(), rows.cols());
    if rows.rank() < 2 || n < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: if rows.rank() < 2 { 1 } else { n },
        });
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(rows.row(i)) {
            *m += v;
        }
    }
    let inv_n = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv_n);

    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for ((c, &v), &m) in centered.iter_mut().zip(rows.row(i)).zip(&mean) {
            *c = v - m;
        }
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] * inv_n;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    Ok((
        Tensor::from_raw(vec![d], mean),
        Tensor::from_raw(vec![d, d], cov),
    ))
}

/// Converts a covariance matrix to a correlation matrix.
///
/// Coordinates whose variance is at or below `min_variance` are inactive:
/// their row and column are zero (diagonal included).
pub fn cov_to_corr(cov: &Tensor, min_variance: f64) -> (Tensor, Vec<bool>) {
    let d = cov.rows();
    let active: Vec<bool> = (0..d).map(|i| cov.get(i, i) > min_variance).collect();
    let sd: Vec<f64> = (0..d).map(|i| cov.get(i, i).max(0.0).sqrt()).collect();
    let mut corr = Tensor::zeros(&[d, d]);
    for i in 0..d {
        for j in 0..d {
            if !(active[i] && active[j]) {
                continue;
            }
            let v = if i == j {
                1.0
            } else {
                (cov.get(i, j) / (sd[i] * sd[j])).clamp(-1.0, 1.0)
            };
            corr.set(i, j, v);
        }
    }
    (corr, active)
}
