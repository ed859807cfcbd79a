use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Tensor;

/// Fully connected layer `y = x W + b` with `W` stored `in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let w = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        Dense {
            weight: Tensor::from_raw(vec![fan_in, fan_out], w),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Stack of dense layers with `tanh` between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`.
    pub fn init<R: Rng>(rng: &mut R, sizes: &[usize]) -> Self {
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::init(rng, w[0], w[1])).collect(),
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    /// Forward pass without a tape. `layer_offset` is added to the layer
    /// index reported in [`Error::Numeric`].
    pub fn forward(&self, x: &Tensor, layer_offset: usize) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut h = x.as_matrix();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weight)?.add_row(layer.bias.data())?;
            if h.check_finite().is_err() {
                return Err(Error::Numeric { layer: layer_offset + i });
            }
            if i < last {
                h = h.map(f64::tanh);
            }
        }
        Ok(h)
    }

    /// Tape forward pass; `params` holds `(weight, bias)` vars per layer.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, params: &[(Var, Var)], layer_offset: usize) -> Result<Var> {
        let last = params.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in params.iter().enumerate() {
            let m = tape.matmul(h, w)?;
            h = tape.add_row(m, b)?;
            if tape.value(h).check_finite().is_err() {
                return Err(Error::Numeric { layer: layer_offset + i });
            }
            if i < last {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}
