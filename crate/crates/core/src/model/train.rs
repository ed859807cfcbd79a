use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::vae::{LossParts, Variant, VaeModel};
use crate::error::{Error, Result};
use crate::linalg::Tensor;
use crate::projection::{ProjectionState, StatsMode};

/// Stream of the training generator; model initialization uses stream 0.
const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_epsilon: f64,
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_epsilon: default_adam_eps(),
            seed,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: field.into(),
                reason,
            })
        };
        if n == 0 {
            return bad("dataset", "is empty".into());
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive".into());
        }
        if self.batch_size == 0 || self.batch_size > n {
            return bad("batch_size", format!("must lie in 1..={n}, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(name, format!("must lie in [0, 1), got {b}"));
            }
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon", "must be > 0".into());
        }
        Ok(())
    }
}

/// First- and second-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: &TrainConfig, params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_epsilon,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (pd, gd) = (p.data_mut(), g.data());
            for (i, &gi) in gd.iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                let mhat = *mi / c1;
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let vhat = *vi / c2;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Loss components averaged over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub recon_bce: f64,
    pub kl: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// CSV with a header row; floats use Rust's shortest round-trip format.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,total,recon_bce,kl,penalty")?;
        for r in &self.epochs {
            writeln!(w, "{},{:?},{:?},{:?},{:?}", r.epoch, r.total, r.recon_bce, r.kl, r.penalty)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("ascii")
    }
}

/// Batch index lists for one epoch. A trailing batch of a single row cannot
/// carry covariance statistics, so it is merged into the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Trains `model` on the rows of `data` with Adam.
///
/// The projection variant fits its layer on every minibatch and keeps a
/// running average of those statistics as the model's projection state,
/// whose axes orient the next minibatch fit. With `refit_after_training` the
/// state is then replaced by a fit over all of `data`.
pub fn train(model: &mut VaeModel, data: &Tensor, config: &TrainConfig) -> Result<TrainingTrace> {
    let n = data.rows();
    config.validate(n)?;
    if data.cols() != model.input_dim() {
        return Err(Error::Config {
            field: "dataset".into(),
            reason: format!("has {} columns, model expects {}", data.cols(), model.input_dim()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut adam = Adam::new(config, &model.params());
    let d = model.latent_dim();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainingTrace::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        let groups = batches(&order, config.batch_size);
        for (b, idx) in groups.iter().enumerate() {
            let diverged = || Error::Diverged { epoch: epoch + 1, batch: b };
            let x = data.select_rows(idx);
            let noise: Vec<f64> = (0..idx.len() * d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let noise = Tensor::new(vec![idx.len(), d], noise)?;
            let (graph, grads, _) = match model.loss_and_grad(&x, &noise) {
                Ok(r) => r,
                Err(Error::Numeric { .. } | Error::NonFinite { .. }) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !graph.parts.total.is_finite() || grads.iter().any(|g| g.check_finite().is_err()) {
                return Err(diverged());
            }
            adam.step(model.params_mut(), &grads);

            if let (Variant::Projection(cfg), Some(stats)) = (model.variant(), graph.batch_stats) {
                let next = match model.projection.take() {
                    Some(mut state) => {
                        state.update_with_stats(&stats.mean, &stats.covariance)?;
                        state
                    }
                    None => ProjectionState::from_stats(
                        stats.mean,
                        stats.covariance,
                        cfg.epsilon,
                        StatsMode::Running { momentum: cfg.momentum },
                    )?,
                };
                model.projection = Some(next);
            }
            sum.total += graph.parts.total;
            sum.recon_bce += graph.parts.recon_bce;
            sum.kl += graph.parts.kl;
            sum.penalty += graph.parts.penalty;
        }
        let k = groups.len() as f64;
        trace.epochs.push(EpochRecord {
            epoch: epoch + 1,
            total: sum.total / k,
            recon_bce: sum.recon_bce / k,
            kl: sum.kl / k,
            penalty: sum.penalty / k,
        });
    }

    if let Variant::Projection(cfg) = model.variant() {
        if cfg.refit_after_training {
            model.refit_projection(data)?;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], &[4, 5, 6, 7, 8]);
        assert_eq!(batches(&order, 3).len(), 3);
        assert_eq!(batches(&order[..1], 4).len(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::new(1, 1, 0);
        let mut p = Tensor::from_rows(&[[1.0, -2.0]]).unwrap();
        let mut adam = Adam::new(&cfg, &[&p]);
        let g = Tensor::from_rows(&[[0.5, -3.0]]).unwrap();
        adam.step(vec![&mut p], &[g]);
        assert!((p.get(0, 0) - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.get(0, 1) - (-2.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(1, 4, 0).validate(4).is_ok());
        assert!(matches!(TrainConfig::new(1, 5, 0).validate(4), Err(Error::Config { .. })));
        assert!(matches!(TrainConfig::new(0, 1, 0).validate(4), Err(Error::Config { .. })));
        assert!(TrainConfig::new(1, 1, 0).validate(0).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let t = TrainingTrace {
            epochs: vec![EpochRecord {
                epoch: 1,
                total: 1.5,
                recon_bce: 1.0,
                kl: 0.5,
                penalty: 0.0,
            }],
        };
        assert_eq!(t.to_csv(), "epoch,total,recon_bce,kl,penalty\n1,1.5,1.0,0.5,0.0\n");
    }
}
