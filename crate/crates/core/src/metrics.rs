//! Reconstruction error, latent correlation and latent variance diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::pgm_bytes;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{cov_to_corr, sample_mean_cov, Tensor};
use crate::model::{kl_diag_gaussian, VaeModel};

/// Coordinates with variance at or below this are reported as inactive.
pub const INACTIVE_VARIANCE: f64 = 1e-15;

/// Floor of [`log10_abs_corr`].
pub const LOG10_FLOOR: f64 = -15.0;

/// Rows per parallel shard in [`recon_bce`].
const SHARD_ROWS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCorr {
    pub corr: Tensor,
    pub active: Vec<bool>,
}

impl LatentCorr {
    /// Largest `|corr|` off the diagonal among active coordinates.
    pub fn max_offdiag(&self) -> f64 {
        max_offdiag_abs(&self.corr)
    }
}

/// Sample correlation of the rows of `means`; inactive coordinates have a
/// zero row and column.
pub fn corr_of(means: &Tensor) -> Result<LatentCorr> {
    let (_, cov) = sample_mean_cov(means)?;
    let (corr, active) = cov_to_corr(&cov, INACTIVE_VARIANCE);
    Ok(LatentCorr { corr, active })
}

/// Correlation of the encoder means (projected for the projection variant)
/// over the rows of `x`.
pub fn latent_corr(model: &VaeModel, x: &Tensor) -> Result<LatentCorr> {
    let (mean, _) = model.encode(x)?;
    corr_of(&mean)
}

pub fn max_offdiag_abs(m: &Tensor) -> f64 {
    let d = m.rows();
    let mut best = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                best = best.max(m.get(i, j).abs());
            }
        }
    }
    best
}

/// Elementwise `log10 |c|`, floored at −15.
pub fn log10_abs_corr(corr: &Tensor) -> Tensor {
    corr.map(|c| {
        let a = c.abs();
        if a < 1e-15 {
            LOG10_FLOOR
        } else {
            a.log10()
        }
    })
}

/// Mean over rows of the pixel-summed Bernoulli NLL of `x` at the decoded
/// encoder mean.
pub fn recon_bce(model: &VaeModel, x: &Tensor, exec: Execution) -> Result<f64> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let shards = n.div_ceil(SHARD_ROWS);
    let per_shard = exec.try_map(shards, |s| {
        let idx: Vec<usize> = (s * SHARD_ROWS..((s + 1) * SHARD_ROWS).min(n)).collect();
        let xs = x.select_rows(&idx);
        let (mean, _) = model.encode(&xs)?;
        let logits = model.decode_logits(&mean)?;
        Ok::<_, Error>(
            (0..xs.rows())
                .map(|r| {
                    logits
                        .row(r)
                        .iter()
                        .zip(xs.row(r))
                        .map(|(&l, &t)| softplus(l) - t * l)
                        .sum::<f64>()
                })
                .collect::<Vec<f64>>(),
        )
    })?;
    let total: f64 = per_shard.iter().flatten().sum();
    Ok(total / n as f64)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Variance of the latent code per coordinate: sample variance of the
/// (projected) encoder means plus the dataset average of `exp(h_k)`.
pub fn full_latent_variance(model: &VaeModel, x: &Tensor) -> Result<Vec<f64>> {
    let (mean, log_var) = model.encode(x)?;
    let (_, cov) = sample_mean_cov(&mean)?;
    let n = x.rows() as f64;
    Ok((0..model.latent_dim())
        .map(|k| {
            let noise: f64 = (0..x.rows()).map(|r| log_var.get(r, k).exp()).sum::<f64>() / n;
            cov.get(k, k) + noise
        })
        .collect())
}

/// KL to the standard normal prior at the encoder outputs, averaged over rows.
pub fn mean_kl(model: &VaeModel, x: &Tensor) -> Result<f64> {
    let (mean, log_var) = model.encode(x)?;
    kl_diag_gaussian(&mean, &log_var)
}

/// Summary of one trained model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub variant: String,
    pub recon_bce: f64,
    pub max_offdiag_corr: f64,
    pub kl: f64,
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str = "variant,recon_bce,max_offdiag_corr,kl";

    pub fn compute(model: &VaeModel, x: &Tensor, exec: Execution) -> Result<Self> {
        Ok(RunMetrics {
            variant: model.variant().name().into(),
            recon_bce: recon_bce(model, x, exec)?,
            max_offdiag_corr: latent_corr(model, x)?.max_offdiag(),
            kl: mean_kl(model, x)?,
        })
    }

    pub fn csv_row(&self) -> String {
        format!("{},{:?},{:?},{:?}", self.variant, self.recon_bce, self.max_offdiag_corr, self.kl)
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("metrics value `{s}`: {e}")));
        match f.as_slice() {
            [v, b, c, k] => Ok(RunMetrics {
                variant: v.to_string(),
                recon_bce: num(b)?,
                max_offdiag_corr: num(c)?,
                kl: num(k)?,
            }),
            _ => Err(Error::Format(format!("expected 4 metrics fields, got `{line}`"))),
        }
    }
}

/// Matrix as CSV, one row per line, no header.
pub fn write_matrix_csv<W: Write>(m: &Tensor, mut w: W) -> Result<()> {
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Grayscale PGM of a `log10 |corr|` grid: −15 is black, 0 is white; each
/// cell becomes a `cell×cell` block.
pub fn corr_heatmap_pgm(log_corr: &Tensor, cell: usize) -> Result<Vec<u8>> {
    let d = log_corr.rows();
    let side = d * cell;
    let mut pixels = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let v = log_corr.get(y / cell, x / cell);
            pixels[y * side + x] = ((v - LOG10_FLOOR) / -LOG10_FLOOR).clamp(0.0, 1.0);
        }
    }
    pgm_bytes(side, side, &pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, FactorSpec};
    use crate::model::{train, ModelConfig, ProjectionConfig, TrainConfig, Variant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn model(p: usize, d: usize, variant: Variant, seed: u64) -> VaeModel {
        VaeModel::new(
            ModelConfig {
                input_dim: p,
                latent_dim: d,
                hidden: 32,
                variant,
            },
            seed,
        )
        .unwrap()
    }

    fn standard() -> Tensor {
        generate(&FactorSpec::standard(), 16, 16, Execution::Parallel).unwrap().images().clone()
    }

    /// Two-pass Pearson correlation, written independently of the library.
    fn naive_corr(x: &Tensor) -> Vec<Vec<f64>> {
        let (n, d) = (x.rows(), x.cols());
        let col = |j: usize| (0..n).map(|i| x.get(i, j)).collect::<Vec<_>>();
        let cols: Vec<Vec<f64>> = (0..d).map(col).collect();
        let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
        let mut out = vec![vec![0.0; d]; d];
        for a in 0..d {
            for b in 0..d {
                let sab: f64 = (0..n).map(|i| (cols[a][i] - means[a]) * (cols[b][i] - means[b])).sum();
                let saa: f64 = cols[a].iter().map(|v| (v - means[a]).powi(2)).sum();
                let sbb: f64 = cols[b].iter().map(|v| (v - means[b]).powi(2)).sum();
                out[a][b] = sab / (saa * sbb).sqrt();
            }
        }
        out
    }

    #[test]
    fn canonical_corr_matches_naive_oracle() {
        let x = standard();
        let m = model(256, 4, Variant::Canonical, 3);
        let c = latent_corr(&m, &x).unwrap();
        let (mean, _) = m.encode(&x).unwrap();
        let oracle = naive_corr(&mean);
        for i in 0..4 {
            for j in 0..4 {
                assert!((c.corr.get(i, j) - oracle[i][j]).abs() < 1e-12);
            }
            assert!((c.corr.get(i, i) - 1.0).abs() < 1e-12);
        }
        assert!(c.active.iter().all(|&a| a));
        assert!(c.corr.max_abs_diff(&c.corr.transpose()) == 0.0);
    }

    #[test]
    fn single_latent_gives_unit_matrix() {
        let x = standard();
        let m = model(256, 1, Variant::Canonical, 1);
        assert_eq!(latent_corr(&m, &x).unwrap().corr.data(), &[1.0]);
    }

    #[test]
    fn inactive_coordinates_are_masked() {
        let means = Tensor::from_rows(&[[1.0, 5.0, 0.0], [2.0, 5.0, 1.0], [4.0, 5.0, -1.0]]).unwrap();
        let c = corr_of(&means).unwrap();
        assert_eq!(c.active, vec![true, false, true]);
        assert_eq!(c.corr.get(1, 1), 0.0);
        assert_eq!(c.corr.get(0, 1), 0.0);
        assert!(c.corr.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn projection_fit_on_same_data_is_decorrelated() {
        let x = standard();
        let m = model(256, 4, Variant::Projection(ProjectionConfig::default()), 2);
        // no stored statistics: the layer is fitted to x itself
        assert!(latent_corr(&m, &x).unwrap().max_offdiag() <= 1e-10);
    }

    #[test]
    fn log10_floor() {
        let c = Tensor::from_rows(&[[1.0, 1e-20], [-0.01, 0.0]]).unwrap();
        let l = log10_abs_corr(&c);
        assert_eq!(l.data(), &[0.0, -15.0, -2.0, -15.0]);
        let img = corr_heatmap_pgm(&l, 2).unwrap();
        assert!(img.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(&img[img.len() - 16..img.len() - 12], &[255, 255, 0, 0]);
    }

    #[test]
    fn constant_half_decoder_costs_log2_per_pixel() {
        let x = standard();
        let m = VaeModel::zeros(ModelConfig {
            input_dim: 256,
            latent_dim: 2,
            hidden: 4,
            variant: Variant::Canonical,
        })
        .unwrap();
        let bce = recon_bce(&m, &x, Execution::Parallel).unwrap();
        assert!((bce - 256.0 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn recon_bce_parallel_equals_sequential() {
        let x = standard();
        let m = model(256, 3, Variant::Canonical, 4);
        assert_eq!(
            recon_bce(&m, &x, Execution::Parallel).unwrap(),
            recon_bce(&m, &x, Execution::Sequential).unwrap()
        );
    }

    #[test]
    fn overfit_memorization_set() {
        let x = generate(&FactorSpec::memorization(), 8, 8, Execution::Sequential).unwrap().images().clone();
        let mut m = VaeModel::new(
            ModelConfig {
                input_dim: 64,
                latent_dim: 2,
                hidden: 256,
                variant: Variant::Canonical,
            },
            0,
        )
        .unwrap();
        train(&mut m, &x, &TrainConfig::new(1500, 8, 0)).unwrap();
        let bce = recon_bce(&m, &x, Execution::Sequential).unwrap();
        assert!(bce < 0.01 * 64.0, "{bce}");
    }

    #[test]
    fn full_variance_matches_sampled_z() {
        let x = standard();
        let m = model(256, 3, Variant::Projection(ProjectionConfig::default()), 6);
        let var = full_latent_variance(&m, &x).unwrap();
        // the mean part of a layer fitted to x is exactly one per axis
        let (mean, lv) = m.encode(&x).unwrap();
        let (_, cov) = sample_mean_cov(&mean).unwrap();
        assert!((0..3).all(|k| (cov.get(k, k) - 1.0).abs() < 1e-10));

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws = 10_000;
        for k in 0..3 {
            let z: Vec<f64> = (0..draws)
                .map(|_| {
                    let i = rng.random_range(0..x.rows());
                    let e: f64 = StandardNormal.sample(&mut rng);
                    mean.get(i, k) + (0.5 * lv.get(i, k)).exp() * e
                })
                .collect();
            let mu = z.iter().sum::<f64>() / draws as f64;
            let sq: Vec<f64> = z.iter().map(|v| (v - mu).powi(2)).collect();
            let s = sq.iter().sum::<f64>() / draws as f64;
            let sd = (sq.iter().map(|v| (v - s).powi(2)).sum::<f64>() / draws as f64).sqrt();
            let se = sd / (draws as f64).sqrt();
            assert!((s - var[k]).abs() <= 4.0 * se, "k={k}: {s} vs {} (se {se})", var[k]);
        }
    }

    #[test]
    fn metrics_csv_round_trip() {
        let r = RunMetrics {
            variant: "beta".into(),
            recon_bce: 12.5,
            max_offdiag_corr: 1e-12,
            kl: 3.25,
        };
        assert_eq!(RunMetrics::parse_csv_row(&r.csv_row()).unwrap(), r);
        assert!(RunMetrics::parse_csv_row("a,b").is_err());
    }
}
