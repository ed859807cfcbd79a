use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{sample_mean_cov, Tensor};
use crate::projection::{project_on_tape, BatchStats, EpsilonRule, ProjectionState, StatsMode, DEFAULT_MOMENTUM};

/// Settings of the projection variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: EpsilonRule,
    /// Momentum of the running statistics updated after every step.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Treat batch mean and covariance as constants in backward.
    #[serde(default)]
    pub stop_gradient: bool,
    /// Replace the running statistics with a full-dataset fit after the
    /// last epoch.
    #[serde(default = "default_true")]
    pub refit_after_training: bool,
}

fn default_epsilon() -> EpsilonRule {
    EpsilonRule::Auto
}

fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}

fn default_true() -> bool {
    true
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            epsilon: EpsilonRule::Auto,
            momentum: DEFAULT_MOMENTUM,
            stop_gradient: false,
            refit_after_training: true,
        }
    }
}

/// Which objective and encoder head the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    Canonical,
    /// KL term weighted by `beta`.
    Beta { beta: f64 },
    /// Adds `gamma · Σ|Σ_g − I|` over the batch covariance of the encoder mean.
    CorrPenalty { gamma: f64 },
    /// Encoder mean whitened by the projection layer.
    Projection(ProjectionConfig),
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Canonical => "canonical",
            Variant::Beta { .. } => "beta",
            Variant::CorrPenalty { .. } => "corr_penalty",
            Variant::Projection(_) => "projection",
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: field.into(),
                reason,
            })
        };
        match *self {
            Variant::Beta { beta } if !(beta > 0.0 && beta.is_finite()) => bad("variant.beta", format!("must be > 0, got {beta}")),
            Variant::CorrPenalty { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                bad("variant.gamma", format!("must be > 0, got {gamma}"))
            }
            Variant::Projection(p) => {
                if let EpsilonRule::Fixed(e) = p.epsilon {
                    if !(e >= 0.0 && e.is_finite()) {
                        return bad("variant.epsilon", format!("must be >= 0, got {e}"));
                    }
                }
                if !(0.0..1.0).contains(&p.momentum) {
                    return bad("variant.momentum", format!("must lie in [0, 1), got {}", p.momentum));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub variant: Variant,
}

pub const DEFAULT_HIDDEN: usize = 256;

fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config {
                field: "latent_dim".into(),
                reason: "must be positive".into(),
            });
        }
        if self.latent_dim >= self.input_dim {
            return Err(Error::Config {
                field: "latent_dim".into(),
                reason: format!("must be smaller than the input dimension {}", self.input_dim),
            });
        }
        if self.hidden == 0 {
            return Err(Error::Config {
                field: "hidden".into(),
                reason: "must be positive".into(),
            });
        }
        self.variant.validate()
    }
}

/// One reparameterized draw `z = mean + exp(log_var / 2) ⊙ noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub mean: Tensor,
    pub log_var: Tensor,
    pub noise: Tensor,
    pub z: Tensor,
}

impl LatentSample {
    pub fn new(mean: Tensor, log_var: Tensor, noise: Tensor) -> Result<Self> {
        let std = log_var.map(|lv| (0.5 * lv).exp());
        let z = mean.add(&std.zip_map(&noise, |s, e| s * e)?)?;
        Ok(LatentSample { mean, log_var, noise, z })
    }
}

/// Loss components, each averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon_bce: f64,
    pub kl: f64,
    pub penalty: f64,
}

/// Variational autoencoder with MLP encoder heads `g` (mean), `h`
/// (log-variance) and decoder `f` (Bernoulli logits).
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    config: ModelConfig,
    pub(crate) encoder_mean: Mlp,
    pub(crate) encoder_log_var: Mlp,
    pub(crate) decoder: Mlp,
    /// Statistics used by `encode` for the projection variant.
    pub(crate) projection: Option<ProjectionState>,
}

/// Tape handles of every parameter, in [`VaeModel::param_names`] order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
    mean_layers: Vec<(Var, Var)>,
    log_var_layers: Vec<(Var, Var)>,
    decoder_layers: Vec<(Var, Var)>,
}

/// Everything a forward pass of the objective leaves on the tape.
#[derive(Debug, Clone)]
pub struct LossGraph {
    pub total: Var,
    pub parts: LossParts,
    pub mean: Var,
    pub log_var: Var,
    pub z: Var,
    pub batch_stats: Option<BatchStats>,
}

impl VaeModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, d, h) = (config.input_dim, config.latent_dim, config.hidden);
        Ok(VaeModel {
            config,
            encoder_mean: Mlp::init(&mut rng, &[p, h, d]),
            encoder_log_var: Mlp::init(&mut rng, &[p, h, d]),
            decoder: Mlp::init(&mut rng, &[d, h, p]),
            projection: None,
        })
    }

    /// Model with every weight and bias zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (p, d, h) = (config.input_dim, config.latent_dim, config.hidden);
        Ok(VaeModel {
            config,
            encoder_mean: Mlp::zeros(&[p, h, d]),
            encoder_log_var: Mlp::zeros(&[p, h, d]),
            decoder: Mlp::zeros(&[d, h, p]),
            projection: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn projection_state(&self) -> Option<&ProjectionState> {
        self.projection.as_ref()
    }

    pub fn set_projection_state(&mut self, state: Option<ProjectionState>) {
        self.projection = state;
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, mlp) in [("g", &self.encoder_mean), ("h", &self.encoder_log_var), ("f", &self.decoder)] {
            for i in 0..mlp.layers.len() {
                names.push(format!("{prefix}.{i}.weight"));
                names.push(format!("{prefix}.{i}.bias"));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.encoder_mean
            .tensors()
            .chain(self.encoder_log_var.tensors())
            .chain(self.decoder.tensors())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder_mean
            .tensors_mut()
            .chain(self.encoder_log_var.tensors_mut())
            .chain(self.decoder.tensors_mut())
            .collect()
    }

    /// Replaces all parameters (same order and shapes as [`VaeModel::params`]).
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(dim_err("set_params", format!("{} tensors for {} slots", values.len(), slots.len())));
        }
        for (slot, v) in slots.iter().zip(&values) {
            if slot.shape() != v.shape() {
                return Err(dim_err("set_params", format!("{:?} into {:?}", v.shape(), slot.shape())));
            }
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            **slot = v;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(dim_err("encode", format!("{} columns, model expects {}", x.cols(), self.input_dim())));
        }
        Ok(())
    }

    /// Raw encoder mean `g(x)`, before any projection.
    pub fn encode_raw(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.encoder_mean.forward(x, 0)
    }

    /// `(mean, log_var)`; the mean passes through the projection layer for
    /// the projection variant. Without stored statistics the layer is fitted
    /// to `x` itself.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let g = self.encode_raw(x)?;
        let log_var = self.encoder_log_var.forward(x, 2)?;
        let mean = match (self.variant(), &self.projection) {
            (Variant::Projection(_), Some(state)) => state.apply(&g)?,
            (Variant::Projection(cfg), None) => ProjectionState::fit(&g, cfg.epsilon, StatsMode::Batch)?.apply(&g)?,
            _ => g,
        };
        Ok((mean, log_var))
    }

    pub fn decoder_mlp(&self) -> &Mlp {
        &self.decoder
    }

    /// Bernoulli logits for latent rows `z`.
    pub fn decode_logits(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.latent_dim() {
            return Err(dim_err("decode", format!("{} columns, latent dimension is {}", z.cols(), self.latent_dim())));
        }
        self.decoder.forward(z, 4)
    }

    /// Bernoulli means in `(0, 1)`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.decode_logits(z)?.map(sigmoid))
    }

    /// Puts all parameters on `tape` as leaves.
    pub fn param_vars(&self, tape: &mut Tape) -> ParamVars {
        let mut vars = Vec::new();
        let mut put = |mlp: &Mlp| -> Vec<(Var, Var)> {
            mlp.layers
                .iter()
                .map(|l| {
                    let w = tape.leaf(l.weight.clone());
                    let b = tape.leaf(l.bias.clone());
                    vars.push(w);
                    vars.push(b);
                    (w, b)
                })
                .collect()
        };
        let mean_layers = put(&self.encoder_mean);
        let log_var_layers = put(&self.encoder_log_var);
        let decoder_layers = put(&self.decoder);
        ParamVars {
            vars,
            mean_layers,
            log_var_layers,
            decoder_layers,
        }
    }

    /// Records the training objective for batch `x` with fixed standard
    /// normal `noise` (`batch×d`). The projection variant uses the batch's
    /// own statistics, with axes oriented like the stored state when there
    /// is one.
    pub fn loss_graph(&self, tape: &mut Tape, params: &ParamVars, x: &Tensor, noise: &Tensor) -> Result<LossGraph> {
        self.check_input(x)?;
        let (n, d) = (x.rows(), self.latent_dim());
        if noise.shape() != [n, d] {
            return Err(dim_err("loss", format!("noise {:?} for batch {n} and latent {d}", noise.shape())));
        }
        let xv = tape.constant(x.as_matrix());
        let g = self.encoder_mean.forward_tape(tape, xv, &params.mean_layers, 0)?;
        let log_var = self.encoder_log_var.forward_tape(tape, xv, &params.log_var_layers, 2)?;
        let (mean, batch_stats) = match self.variant() {
            Variant::Projection(cfg) => {
                let reference = self.projection.as_ref().map(|s| &s.eig().eigenvectors);
                let (m, s) = project_on_tape(tape, g, cfg.epsilon, cfg.stop_gradient, reference)?;
                (m, Some(s))
            }
            _ => (g, None),
        };

        // reparameterization
        let half = tape.scale(log_var, 0.5);
        let std = tape.exp(half);
        let eps = tape.constant(noise.clone());
        let spread = tape.mul(std, eps)?;
        let z = tape.add(mean, spread)?;

        // Bernoulli NLL from logits: softplus(l) − x·l
        let logits = self.decoder.forward_tape(tape, z, &params.decoder_layers, 4)?;
        let sp = tape.softplus(logits);
        let xl = tape.mul(xv, logits)?;
        let nll = tape.sub(sp, xl)?;
        let nll_sum = tape.sum(nll);
        let recon = tape.scale(nll_sum, 1.0 / n as f64);

        let kl = kl_on_tape(tape, mean, log_var)?;
        let kl_weight = match self.variant() {
            Variant::Beta { beta } => beta,
            _ => 1.0,
        };
        let weighted_kl = tape.scale(kl, kl_weight);
        let mut total = tape.add(recon, weighted_kl)?;

        let mut penalty_value = 0.0;
        if let Variant::CorrPenalty { gamma } = self.variant() {
            let penalty = corr_penalty_on_tape(tape, g, gamma)?;
            penalty_value = tape.value(penalty).item();
            total = tape.add(total, penalty)?;
        }
        let parts = LossParts {
            total: tape.value(total).item(),
            recon_bce: tape.value(recon).item(),
            kl: tape.value(kl).item(),
            penalty: penalty_value,
        };
        Ok(LossGraph {
            total,
            parts,
            mean,
            log_var,
            z,
            batch_stats,
        })
    }

    /// Training objective `recon + w·kl + penalty` on one batch.
    pub fn loss(&self, x: &Tensor, noise: &Tensor) -> Result<LossParts> {
        let mut tape = Tape::new();
        let params = self.param_vars(&mut tape);
        Ok(self.loss_graph(&mut tape, &params, x, noise)?.parts)
    }

    /// Objective plus gradients for every parameter.
    pub fn loss_and_grad(&self, x: &Tensor, noise: &Tensor) -> Result<(LossGraph, Vec<Tensor>, Gradients)> {
        let mut tape = Tape::new();
        let params = self.param_vars(&mut tape);
        let graph = self.loss_graph(&mut tape, &params, x, noise)?;
        let grads = tape.backward(graph.total)?;
        let per_param = params.vars.iter().map(|&v| grads.get(v)).collect();
        Ok((graph, per_param, grads))
    }

    /// Refits the evaluation statistics of a projection model to the raw
    /// encoder means of `x`, keeping the orientation of the current axes.
    pub fn refit_projection(&mut self, x: &Tensor) -> Result<()> {
        if let Variant::Projection(cfg) = self.variant() {
            let g = self.encode_raw(x)?;
            let (mu, sigma) = sample_mean_cov(&g)?;
            let mut state =
                ProjectionState::from_stats(mu, sigma, cfg.epsilon, StatsMode::Running { momentum: cfg.momentum })?;
            if let Some(current) = &self.projection {
                state.align_to(&current.eig().eigenvectors)?;
            }
            self.projection = Some(state);
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `½ Σ_k (μ² + σ² − 1 − log σ²)` summed over latent dimensions and
/// averaged over rows.
pub fn kl_diag_gaussian(mean: &Tensor, log_var: &Tensor) -> Result<f64> {
    if mean.shape() != log_var.shape() {
        return Err(dim_err("kl_diag_gaussian", format!("{:?} vs {:?}", mean.shape(), log_var.shape())));
    }
    let total: f64 = mean
        .data()
        .iter()
        .zip(log_var.data())
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum();
    Ok(total / mean.rows() as f64)
}

fn kl_on_tape(tape: &mut Tape, mean: Var, log_var: Var) -> Result<Var> {
    let n = tape.value(mean).rows() as f64;
    let m2 = tape.square(mean);
    let var = tape.exp(log_var);
    let a = tape.add(m2, var)?;
    let b = tape.sub(a, log_var)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    Ok(tape.scale(s, 0.5 / n))
}

/// `γ Σ_ij |Σ_g − I|_ij` with `Σ_g` the biased batch covariance of `g`.
fn corr_penalty_on_tape(tape: &mut Tape, g: Var, gamma: f64) -> Result<Var> {
    let (n, d) = (tape.value(g).rows(), tape.value(g).cols());
    let mu = tape.mean_rows(g);
    let neg = tape.scale(mu, -1.0);
    let c = tape.add_row(g, neg)?;
    let ct = tape.transpose(c);
    let s = tape.matmul(ct, c)?;
    let cov = tape.scale(s, 1.0 / n as f64);
    let eye = tape.constant(Tensor::eye(d));
    let diff = tape.sub(cov, eye)?;
    let a = tape.abs(diff);
    let l1 = tape.sum(a);
    Ok(tape.scale(l1, gamma))
}

/// Sum over pixels of the Bernoulli NLL of `x` under `probs`, per row.
pub fn bce_per_row(probs: &Tensor, x: &Tensor) -> Result<Vec<f64>> {
    if probs.shape() != x.shape() {
        return Err(dim_err("bce", format!("{:?} vs {:?}", probs.shape(), x.shape())));
    }
    const FLOOR: f64 = 1e-300;
    Ok((0..x.rows())
        .map(|i| {
            probs
                .row(i)
                .iter()
                .zip(x.row(i))
                .map(|(&p, &t)| -(t * p.max(FLOOR).ln() + (1.0 - t) * (1.0 - p).max(FLOOR).ln()))
                .sum()
        })
        .collect())
}
