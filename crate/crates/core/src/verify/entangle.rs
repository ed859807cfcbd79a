use rand::Rng;
use serde::Serialize;

use super::decoder::Decoder;
use super::sampler::{EllipticalSampler, Family};
use crate::autodiff::Tape;
use crate::error::{dim_err, Error, Result};
use crate::linalg::Tensor;

/// Smallest sample size accepted by the Monte-Carlo estimators.
pub const MIN_SAMPLES: usize = 1_000;

/// Rows per tape when estimating partial derivatives.
const GRAD_CHUNK: usize = 8_192;

/// Cross-covariance of latent coordinate `k` with output `q` of a decoder
/// whose coordinate `k` is frozen at `c_k` (indices are 0-based).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntanglementReport {
    pub k: usize,
    pub q: usize,
    pub c_k: f64,
    pub mc_crosscov: f64,
    pub mc_stderr: f64,
    /// Covariance-weighted mean partial derivatives, when computed.
    pub analytic: Option<f64>,
    pub analytic_stderr: Option<f64>,
    pub n_samples: usize,
}

impl EntanglementReport {
    /// `|mc| ≤ sigmas · stderr`.
    pub fn is_zero_within(&self, sigmas: f64) -> bool {
        self.mc_crosscov.abs() <= sigmas * self.mc_stderr
    }

    /// `|mc − analytic| ≤ sigmas · √(se_mc² + se_analytic²)`; false when no
    /// analytic value is attached.
    pub fn agrees_within(&self, sigmas: f64) -> bool {
        match (self.analytic, self.analytic_stderr) {
            (Some(a), Some(se)) => (self.mc_crosscov - a).abs() <= sigmas * self.mc_stderr.hypot(se),
            _ => false,
        }
    }
}

/// Mean and plug-in standard error `sd / √n` of `values`.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    (m, (var / n).sqrt())
}

fn check_indices(decoder: &dyn Decoder, d: usize, k: usize, q: usize, n: usize) -> Result<()> {
    if decoder.latent_dim() != d {
        return Err(dim_err("entanglement", format!("decoder takes {} inputs, sampler has {d}", decoder.latent_dim())));
    }
    if k >= d || q >= decoder.output_dim() {
        return Err(dim_err("entanglement", format!("k={k} or q={q} out of range")));
    }
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData { needed: MIN_SAMPLES, got: n });
    }
    Ok(())
}

fn freeze(z: &Tensor, k: usize, c_k: f64) -> Tensor {
    let mut out = z.clone();
    for r in 0..z.rows() {
        out.set(r, k, c_k);
    }
    out
}

/// Monte-Carlo estimate of `Cov[Z_k, f_q(Z^{\k})]` from `n` draws.
pub fn mc_cross_cov<R: Rng>(
    decoder: &dyn Decoder,
    sampler: &EllipticalSampler,
    k: usize,
    c_k: f64,
    q: usize,
    n: usize,
    rng: &mut R,
) -> Result<EntanglementReport> {
    check_indices(decoder, sampler.dim(), k, q, n)?;
    let z = sampler.sample(rng, n);
    let out = decoder.forward(&freeze(&z, k, c_k))?;
    out.check_finite().map_err(|_| Error::Numeric { layer: 0 })?;
    let zk: Vec<f64> = (0..n).map(|r| z.get(r, k)).collect();
    let fq: Vec<f64> = (0..n).map(|r| out.get(r, q)).collect();
    let (mz, _) = mean_stderr(&zk);
    let (mf, _) = mean_stderr(&fq);
    let prods: Vec<f64> = zk.iter().zip(&fq).map(|(a, b)| (a - mz) * (b - mf)).collect();
    let (mc, se) = mean_stderr(&prods);
    Ok(EntanglementReport {
        k,
        q,
        c_k,
        mc_crosscov: mc,
        mc_stderr: se,
        analytic: None,
        analytic_stderr: None,
        n_samples: n,
    })
}

/// `Σ_{l≠k} Cov(Z_k, Z_l) · E[∂f_q/∂z_l (Z^{\k})]` with the expectations
/// estimated over `n` fresh Gaussian draws; returns `(value, stderr)`.
pub fn stein_rhs<R: Rng>(
    decoder: &dyn Decoder,
    sampler: &EllipticalSampler,
    k: usize,
    c_k: f64,
    q: usize,
    n: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if sampler.family() != Family::Gaussian {
        return Err(Error::Contract("the Stein right-hand side needs a Gaussian sampler".into()));
    }
    let d = sampler.dim();
    check_indices(decoder, d, k, q, n)?;
    let weights: Vec<f64> = (0..d).map(|l| if l == k { 0.0 } else { sampler.covariance().get(k, l) }).collect();
    if weights.iter().all(|&w| w == 0.0) {
        return Ok((0.0, 0.0));
    }
    let p = decoder.output_dim();
    let mut per_row = Vec::with_capacity(n);
    let mut done = 0;
    while done < n {
        let m = GRAD_CHUNK.min(n - done);
        let z = freeze(&sampler.sample(rng, m), k, c_k);
        let mut tape = Tape::new();
        let zv = tape.leaf(z);
        let out = decoder.forward_tape(&mut tape, zv)?;
        let mut pick = Tensor::zeros(&[1, p]);
        pick.set(0, q, 1.0);
        let pick = tape.constant(pick);
        let col = tape.mul_row(out, pick)?;
        let total = tape.sum(col);
        let grads = tape.backward(total)?;
        let partials = grads.get(zv);
        for r in 0..m {
            per_row.push(partials.row(r).iter().zip(&weights).map(|(g, w)| g * w).sum::<f64>());
        }
        done += m;
    }
    Ok(mean_stderr(&per_row))
}

/// [`mc_cross_cov`] with the Stein right-hand side attached, each from its
/// own draws.
#[allow(clippy::too_many_arguments)]
pub fn stein_report<R: Rng>(
    decoder: &dyn Decoder,
    sampler: &EllipticalSampler,
    k: usize,
    c_k: f64,
    q: usize,
    n: usize,
    mc_rng: &mut R,
    stein_rng: &mut R,
) -> Result<EntanglementReport> {
    let mut report = mc_cross_cov(decoder, sampler, k, c_k, q, n, mc_rng)?;
    let (a, se) = stein_rhs(decoder, sampler, k, c_k, q, n, stein_rng)?;
    report.analytic = Some(a);
    report.analytic_stderr = Some(se);
    Ok(report)
}

/// Cross-covariance under an uncorrelated elliptical sampler; the caller
/// judges it with [`EntanglementReport::is_zero_within`].
pub fn elliptical_zero_check<R: Rng>(
    decoder: &dyn Decoder,
    sampler: &EllipticalSampler,
    k: usize,
    c_k: f64,
    q: usize,
    n: usize,
    rng: &mut R,
) -> Result<EntanglementReport> {
    if !sampler.is_diagonal() {
        return Err(Error::Contract("elliptical zero check needs a diagonal covariance".into()));
    }
    let mut report = mc_cross_cov(decoder, sampler, k, c_k, q, n, rng)?;
    report.analytic = Some(0.0);
    report.analytic_stderr = Some(0.0);
    Ok(report)
}
