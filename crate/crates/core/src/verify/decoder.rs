use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::linalg::Tensor;
use crate::model::{Mlp, VaeModel};

/// Deterministic map `ℝ^d → ℝ^p` evaluated row-wise, with a tape path for
/// partial derivatives.
pub trait Decoder: Sync {
    fn latent_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, z: &Tensor) -> Result<Tensor>;
    fn forward_tape(&self, tape: &mut Tape, z: Var) -> Result<Var>;
}

/// `f(z) = z W + b`, `W` stored `d×p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl LinearDecoder {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        if weight.rank() != 2 || bias.len() != weight.cols() {
            return Err(dim_err("LinearDecoder", format!("weight {:?} with bias of length {}", weight.shape(), bias.len())));
        }
        Ok(LinearDecoder { weight, bias })
    }

    /// Single-output decoder `f(z) = w′z`.
    pub fn from_weights(w: &[f64]) -> Self {
        LinearDecoder {
            weight: Tensor::from_raw(vec![w.len(), 1], w.to_vec()),
            bias: vec![0.0],
        }
    }
}

impl Decoder for LinearDecoder {
    fn latent_dim(&self) -> usize {
        self.weight.rows()
    }

    fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, z: &Tensor) -> Result<Tensor> {
        z.as_matrix().matmul(&self.weight)?.add_row(&self.bias)
    }

    fn forward_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(Tensor::from_raw(vec![1, self.bias.len()], self.bias.clone()));
        let m = tape.matmul(z, w)?;
        tape.add_row(m, b)
    }
}

/// Output independent of `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantDecoder {
    pub latent_dim: usize,
    pub value: Vec<f64>,
}

impl Decoder for ConstantDecoder {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn output_dim(&self) -> usize {
        self.value.len()
    }

    fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let n = z.rows();
        Ok(Tensor::from_raw(
            vec![n, self.value.len()],
            (0..n).flat_map(|_| self.value.iter().copied()).collect(),
        ))
    }

    fn forward_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        // 0·z keeps the output attached to z so backward sees zero partials
        let zero_map = tape.constant(Tensor::zeros(&[self.latent_dim, self.value.len()]));
        let m = tape.matmul(z, zero_map)?;
        let row = tape.constant(Tensor::from_raw(vec![1, self.value.len()], self.value.clone()));
        tape.add_row(m, row)
    }
}

/// `tanh` MLP with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDecoder(pub Mlp);

fn mlp_tape(mlp: &Mlp, tape: &mut Tape, z: Var) -> Result<Var> {
    let params: Vec<(Var, Var)> = mlp
        .layers
        .iter()
        .map(|l| (tape.constant(l.weight.clone()), tape.constant(l.bias.clone())))
        .collect();
    mlp.forward_tape(tape, z, &params, 0)
}

impl Decoder for MlpDecoder {
    fn latent_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }

    fn forward(&self, z: &Tensor) -> Result<Tensor> {
        self.0.forward(z, 0)
    }

    fn forward_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        mlp_tape(&self.0, tape, z)
    }
}

/// A trained model's decoder `f*`, producing Bernoulli means.
impl Decoder for VaeModel {
    fn latent_dim(&self) -> usize {
        VaeModel::latent_dim(self)
    }

    fn output_dim(&self) -> usize {
        self.input_dim()
    }

    fn forward(&self, z: &Tensor) -> Result<Tensor> {
        self.decode(z)
    }

    fn forward_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let logits = mlp_tape(self.decoder_mlp(), tape, z)?;
        Ok(tape.sigmoid(logits))
    }
}
