use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::decoder::MlpDecoder;
use super::entangle::{elliptical_zero_check, stein_report, EntanglementReport};
use super::entropy::{abs_determinant, entropy_invariance_check, EntropyCheck};
use super::sampler::{EllipticalSampler, Family};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::Tensor;
use crate::model::Mlp;

pub const BATTERY_SIZE: usize = 100;
pub const BATTERY_SAMPLES: usize = 100_000;
pub const REQUIRED_PASSES: usize = 95;
pub const SIGMAS: f64 = 3.0;

const MAX_LATENT: usize = 4;
const MAX_OUTPUT: usize = 8;
const HIDDEN: usize = 8;
const FROZEN_VALUES: [f64; 3] = [-1.0, 0.0, 1.0];

#[derive(Debug, Clone, Copy)]
enum Stream {
    Config = 0,
    Mc = 1,
    Stein = 2,
    StudentT = 3,
    Laplace = 4,
    Entropy = 5,
}

fn stream_rng(seed: u64, index: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 * 8 + stream as u64);
    rng
}

/// One randomly drawn verification configuration.
#[derive(Debug, Clone)]
pub struct Case {
    pub seed: u64,
    pub index: usize,
    pub k: usize,
    pub q: usize,
    pub c_k: f64,
    pub covariance: Tensor,
    pub decoder: MlpDecoder,
}

impl Case {
    /// Case `index` of the battery seeded by `seed`: `d ∈ 2..=4`,
    /// `p ∈ 2..=8`, a random tanh-MLP decoder and either a full-rank
    /// `Σ = AA′ + 0.1 I` or a random positive diagonal.
    pub fn random(seed: u64, index: usize, diagonal: bool) -> Self {
        let mut rng = stream_rng(seed, index, Stream::Config);
        let d = rng.random_range(2..=MAX_LATENT);
        let p = rng.random_range(2..=MAX_OUTPUT);
        let decoder = MlpDecoder(Mlp::init(&mut rng, &[d, HIDDEN, p]));
        let covariance = if diagonal {
            Tensor::from_diag(&(0..d).map(|_| rng.random_range(0.2..2.0)).collect::<Vec<_>>())
        } else {
            let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = Tensor::from_raw(vec![d, d], a);
            let mut s = a.matmul(&a.transpose()).expect("square");
            for i in 0..d {
                s.set(i, i, s.get(i, i) + 0.1);
            }
            s
        };
        Case {
            seed,
            index,
            k: rng.random_range(0..d),
            q: rng.random_range(0..p),
            c_k: *FROZEN_VALUES.choose(&mut rng).expect("nonempty"),
            covariance,
            decoder,
        }
    }

    pub fn dim(&self) -> usize {
        self.covariance.rows()
    }

    /// Short SHA-256 digest of everything that defines the case.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((self.index as u64).to_le_bytes());
        h.update((self.k as u64).to_le_bytes());
        h.update((self.q as u64).to_le_bytes());
        h.update(self.c_k.to_le_bytes());
        let tensors = std::iter::once(&self.covariance).chain(self.decoder.0.tensors());
        for t in tensors {
            for &s in t.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub config_hash: String,
    pub report: EntanglementReport,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct BatteryResult {
    pub name: String,
    pub cases: Vec<CaseResult>,
}

impl BatteryResult {
    pub fn passed(&self) -> usize {
        self.cases.iter().filter(|c| c.pass).count()
    }

    pub fn total(&self) -> usize {
        self.cases.len()
    }

    /// At least 95 of every 100 cases pass.
    pub fn meets_threshold(&self) -> bool {
        self.passed() * BATTERY_SIZE >= REQUIRED_PASSES * self.total()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "config_hash,k,q,mc,stderr,analytic,pass")?;
        for c in &self.cases {
            let r = &c.report;
            let analytic = r.analytic.map(|a| format!("{a:?}")).unwrap_or_default();
            writeln!(w, "{},{},{},{:?},{:?},{},{}", c.config_hash, r.k, r.q, r.mc_crosscov, r.mc_stderr, analytic, c.pass)?;
        }
        Ok(())
    }
}

/// Monte-Carlo cross-covariance against the Stein right-hand side over
/// `cases` random correlated-Gaussian configurations.
pub fn stein_battery(seed: u64, cases: usize, n: usize, exec: Execution) -> Result<BatteryResult> {
    let results = exec.try_map(cases, |i| {
        let case = Case::random(seed, i, false);
        let sampler = EllipticalSampler::gaussian(vec![0.0; case.dim()], case.covariance.clone())?;
        let mut mc = stream_rng(seed, i, Stream::Mc);
        let mut st = stream_rng(seed, i, Stream::Stein);
        let report = stein_report(&case.decoder, &sampler, case.k, case.c_k, case.q, n, &mut mc, &mut st)?;
        Ok::<_, Error>(CaseResult {
            config_hash: case.hash(),
            pass: report.agrees_within(SIGMAS),
            report,
        })
    })?;
    Ok(BatteryResult {
        name: "stein".into(),
        cases: results,
    })
}

/// Zero cross-covariance under diagonal-covariance samplers of `family`.
pub fn elliptical_battery(family: Family, seed: u64, cases: usize, n: usize, exec: Execution) -> Result<BatteryResult> {
    let stream = match family {
        Family::Gaussian => Stream::Mc,
        Family::StudentT { .. } => Stream::StudentT,
        Family::Laplace => Stream::Laplace,
    };
    let results = exec.try_map(cases, |i| {
        let case = Case::random(seed, i, true);
        let sampler = EllipticalSampler::new(family, vec![0.0; case.dim()], case.covariance.clone())?;
        let mut rng = stream_rng(seed, i, stream);
        let report = elliptical_zero_check(&case.decoder, &sampler, case.k, case.c_k, case.q, n, &mut rng)?;
        Ok::<_, Error>(CaseResult {
            config_hash: case.hash(),
            pass: report.is_zero_within(SIGMAS),
            report,
        })
    })?;
    Ok(BatteryResult {
        name: family.name(),
        cases: results,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyCaseResult {
    pub index: usize,
    pub h_before: f64,
    pub h_after: f64,
    pub abs_det: f64,
    pub singular_detected: bool,
    pub pass: bool,
}

/// Random invertible affine maps on random data must preserve empirical
/// entropy, and a rank-deficient variant of each map must be rejected.
pub fn entropy_battery(seed: u64, cases: usize, rows: usize, exec: Execution) -> Result<Vec<EntropyCaseResult>> {
    exec.try_map(cases, |i| {
        let mut rng = stream_rng(seed, i, Stream::Entropy);
        let d = rng.random_range(2..=MAX_LATENT);
        // a few deliberate duplicates so the entropy is not just log n
        let distinct = rows - rows / 10;
        let mut v: Vec<f64> = (0..distinct * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        for _ in distinct..rows {
            let r = rng.random_range(0..distinct);
            v.extend_from_within(r * d..(r + 1) * d);
        }
        let x = Tensor::from_raw(vec![rows, d], v);
        let mut a: Tensor;
        loop {
            a = Tensor::from_raw(vec![d, d], (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect());
            if abs_determinant(&a)? > 1e-3 {
                break;
            }
        }
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let EntropyCheck {
            h_before,
            h_after,
            abs_det,
        } = entropy_invariance_check(&x, &a, &b)?;
        // copy the first column into the second: rank d−1
        let mut singular = a.clone();
        for r in 0..d {
            singular.set(r, 1, singular.get(r, 0));
        }
        let singular_detected = matches!(entropy_invariance_check(&x, &singular, &b), Err(Error::NotInvertible { .. }));
        Ok(EntropyCaseResult {
            index: i,
            h_before,
            h_after,
            abs_det,
            singular_detected,
            pass: h_before == h_after && singular_detected,
        })
    })
}

pub fn write_entropy_csv<W: Write>(results: &[EntropyCaseResult], mut w: W) -> Result<()> {
    writeln!(w, "index,h_before,h_after,abs_det,singular_detected,pass")?;
    for r in results {
        writeln!(w, "{},{:?},{:?},{:?},{},{}", r.index, r.h_before, r.h_after, r.abs_det, r.singular_detected, r.pass)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_reproducible_and_distinct() {
        let a = Case::random(1, 3, false);
        let b = Case::random(1, 3, false);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), Case::random(1, 4, false).hash());
        assert_ne!(a.hash(), Case::random(2, 3, false).hash());
        assert_eq!(a.hash().len(), 16);
        let eig = crate::linalg::sym_eig(&a.covariance).unwrap();
        assert!(eig.min_eigenvalue() >= 0.1 - 1e-12);
        let diag = Case::random(1, 3, true);
        assert!(EllipticalSampler::gaussian(vec![0.0; diag.dim()], diag.covariance).unwrap().is_diagonal());
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let s = stein_battery(5, 6, 2_000, Execution::Sequential).unwrap();
        let p = stein_battery(5, 6, 2_000, Execution::Parallel).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        s.write_csv(&mut a).unwrap();
        p.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_batteries_mostly_pass() {
        let s = stein_battery(9, 20, 20_000, Execution::Parallel).unwrap();
        assert!(s.passed() >= 17, "{}", s.passed());
        for fam in [Family::Gaussian, Family::StudentT { nu: 5.0 }, Family::Laplace] {
            let e = elliptical_battery(fam, 9, 20, 20_000, Execution::Parallel).unwrap();
            assert!(e.passed() >= 17, "{fam:?}: {}", e.passed());
        }
    }

    #[test]
    fn entropy_cases_pass() {
        let r = entropy_battery(3, 10, 300, Execution::Parallel).unwrap();
        assert!(r.iter().all(|c| c.pass), "{r:?}");
        assert!(r.iter().all(|c| c.h_before < (300f64).ln()));
    }
}
