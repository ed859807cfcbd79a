//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Nodes are appended to a [`Tape`] in creation order, which is a valid
//! topological order, so [`Tape::backward`] is a single reverse sweep.
//! The tape is never mutated by `backward`; running it twice yields the
//! same gradients.
//!
//! ```
//! use dlab_core::autodiff::Tape;
//! use dlab_core::linalg::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.square(x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).item(), 6.0);
//! ```

pub mod check;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{sym_eig, Tensor};

/// Eigenvalue pairs closer than this fraction of the largest magnitude are
/// treated as degenerate in the eigenvector adjoint.
pub const DEGENERACY_TOLERANCE: f64 = 1e-6;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Square(Var),
    Abs(Var),
    Powf(Var, f64),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MeanRows(Var),
    Transpose(Var),
    SliceRows(Var, usize),
    /// Packed `(d+1)×d` value: row 0 holds eigenvalues, rows 1.. hold U.
    SymEig(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of a forward computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    degenerate_pairs: usize,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Number of eigenvalue pairs whose eigenvector coupling was clamped to
    /// zero because they were (near-)degenerate.
    pub fn degenerate_pairs(&self) -> usize {
        self.degenerate_pairs
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Copies `v`'s value as a constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, mk: fn(Var, Var) -> Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(op, va, vb)?;
        let out = va.zip_map(vb, f)?;
        Ok(self.push(out, mk(a, b)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Sum of all entries, as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all entries, as a `1×1` tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.sum() / t.len().max(1) as f64;
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Elementwise absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, move |x| x.powf(p), Op::Powf(a, p))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| x + c, Op::AddScalar(a))
    }

    fn check_row(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.len() != va.cols() || va.rank() != 2 {
            return Err(dim_err(
                op,
                format!("row {:?} against matrix {:?}", vr.shape(), va.shape()),
            ));
        }
        Ok(())
    }

    /// Adds the row vector `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", a, row)?;
        let out = self.value(a).add_row(self.value(row).data())?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", a, row)?;
        let va = self.value(a);
        let r = self.value(row).data();
        let c = va.cols();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * r[i % c])
            .collect();
        let out = Tensor::from_raw(va.shape().to_vec(), data);
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    /// Column means of an `n×c` matrix, as `1×c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (n, c) = (va.rows(), va.cols());
        let mut m = vec![0.0; c];
        for i in 0..n {
            for (acc, &x) in m.iter_mut().zip(va.row(i)) {
                *acc += x;
            }
        }
        m.iter_mut().for_each(|x| *x /= n as f64);
        self.push(Tensor::from_raw(vec![1, c], m), Op::MeanRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start > end || end > va.rows() {
            return Err(dim_err(
                "slice_rows",
                format!("{start}..{end} of {} rows", va.rows()),
            ));
        }
        let c = va.cols();
        let out = Tensor::from_raw(vec![end - start, c], va.data()[start * c..end * c].to_vec());
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Symmetric eigendecomposition; returns `(eigenvalues as 1×d, U as d×d)`.
    pub fn sym_eig(&mut self, a: Var) -> Result<(Var, Var)> {
        let eig = sym_eig(self.value(a))?;
        let d = eig.dim();
        let mut packed = Vec::with_capacity((d + 1) * d);
        packed.extend_from_slice(&eig.eigenvalues);
        packed.extend_from_slice(eig.eigenvectors.data());
        let node = self.push(Tensor::from_raw(vec![d + 1, d], packed), Op::SymEig(a));
        let values = self.slice_rows(node, 0, 1)?;
        let vectors = self.slice_rows(node, 1, d + 1)?;
        Ok((values, vectors))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));
        let mut degenerate_pairs = 0;

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut contributions: Vec<(Var, Tensor)> = Vec::with_capacity(2);
            let val = |v: Var| &self.nodes[v.0].value;
            match node.op {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    contributions.push((a, g.clone()));
                    contributions.push((b, g.clone()));
                }
                Op::Sub(a, b) => {
                    contributions.push((a, g.clone()));
                    contributions.push((b, g.scale(-1.0)));
                }
                Op::Mul(a, b) => {
                    contributions.push((a, g.zip_map(val(b), |g, y| g * y)?));
                    contributions.push((b, g.zip_map(val(a), |g, x| g * x)?));
                }
                Op::MatMul(a, b) => {
                    contributions.push((a, g.matmul(&val(b).transpose())?));
                    contributions.push((b, val(a).transpose().matmul(&g)?));
                }
                Op::Sum(a) => {
                    contributions.push((a, Tensor::full(val(a).shape(), g.item())));
                }
                Op::Mean(a) => {
                    let n = val(a).len().max(1) as f64;
                    contributions.push((a, Tensor::full(val(a).shape(), g.item() / n)));
                }
                Op::Exp(a) => contributions.push((a, g.zip_map(&node.value, |g, y| g * y)?)),
                Op::Log(a) => contributions.push((a, g.zip_map(val(a), |g, x| g / x)?)),
                Op::Tanh(a) => {
                    contributions.push((a, g.zip_map(&node.value, |g, y| g * (1.0 - y * y))?))
                }
                Op::Sigmoid(a) => {
                    contributions.push((a, g.zip_map(&node.value, |g, y| g * y * (1.0 - y))?))
                }
                Op::Softplus(a) => {
                    contributions.push((a, g.zip_map(val(a), |g, x| g * sigmoid(x))?))
                }
                Op::Square(a) => {
                    contributions.push((a, g.zip_map(val(a), |g, x| 2.0 * g * x)?))
                }
                Op::Abs(a) => contributions.push((
                    a,
                    g.zip_map(val(a), |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })?,
                )),
                Op::Powf(a, p) => contributions.push((
                    a,
                    g.zip_map(val(a), |g, x| g * p * x.powf(p - 1.0))?,
                )),
                Op::Scale(a, c) => contributions.push((a, g.scale(c))),
                Op::AddScalar(a) => contributions.push((a, g.clone())),
                Op::AddRow(a, r) => {
                    let c = g.cols();
                    let mut col = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (acc, &x) in col.iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                    contributions.push((a, g.clone()));
                    contributions.push((r, Tensor::from_raw(val(r).shape().to_vec(), col)));
                }
                Op::MulRow(a, r) => {
                    let rv = val(r).data();
                    let av = val(a);
                    let c = g.cols();
                    let mut col = vec![0.0; c];
                    let mut ga = Vec::with_capacity(g.len());
                    for (idx, (&gv, &x)) in g.data().iter().zip(av.data()).enumerate() {
                        ga.push(gv * rv[idx % c]);
                        col[idx % c] += gv * x;
                    }
                    contributions.push((a, Tensor::from_raw(g.shape().to_vec(), ga)));
                    contributions.push((r, Tensor::from_raw(val(r).shape().to_vec(), col)));
                }
                Op::MeanRows(a) => {
                    let va = val(a);
                    let n = va.rows() as f64;
                    let c = va.cols();
                    let data = (0..va.len()).map(|idx| g.data()[idx % c] / n).collect();
                    contributions.push((a, Tensor::from_raw(va.shape().to_vec(), data)));
                }
                Op::Transpose(a) => contributions.push((a, g.transpose())),
                Op::SliceRows(a, start) => {
                    let va = val(a);
                    let c = va.cols();
                    let mut full = vec![0.0; va.len()];
                    full[start * c..start * c + g.len()].copy_from_slice(g.data());
                    contributions.push((a, Tensor::from_raw(va.shape().to_vec(), full)));
                }
                Op::SymEig(a) => {
                    let (ga, clamped) = eig_adjoint(&node.value, &g);
                    degenerate_pairs += clamped;
                    contributions.push((a, ga));
                }
            }
            for (v, c) in contributions {
                debug_assert_eq!(c.shape(), self.value(v).shape());
                grads[v.0] = Some(match grads[v.0].take() {
                    Some(prev) => prev.add(&c)?,
                    None => c,
                });
            }
            if matches!(node.op, Op::Leaf | Op::Constant) {
                grads[i] = Some(g);
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            degenerate_pairs,
        })
    }
}

/// Adjoint of `A -> (λ, U)` for symmetric `A`:
/// `Ā = sym(U (diag(λ̄) + F ∘ (U'Ū)) U')` with `F_ij = 1/(λ_j − λ_i)`.
/// Near-degenerate pairs get `F_ij = 0`. Returns the count of such pairs.
fn eig_adjoint(packed: &Tensor, g: &Tensor) -> (Tensor, usize) {
    let d = packed.cols();
    let lambda = &packed.data()[..d];
    let u = Tensor::from_raw(vec![d, d], packed.data()[d..].to_vec());
    let g_lambda = &g.data()[..d];
    let g_u = Tensor::from_raw(vec![d, d], g.data()[d..].to_vec());

    let scale = lambda.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let gap_floor = DEGENERACY_TOLERANCE * scale;
    let utg = u.transpose().matmul(&g_u).expect("square");
    let mut inner = Tensor::zeros(&[d, d]);
    let mut clamped = 0;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                inner.set(i, i, g_lambda[i]);
                continue;
            }
            let gap = lambda[j] - lambda[i];
            if gap.abs() < gap_floor || gap == 0.0 {
                if i < j {
                    clamped += 1;
                }
                continue;
            }
            inner.set(i, j, utg.get(i, j) / gap);
        }
    }
    let full = u
        .matmul(&inner)
        .and_then(|m| m.matmul(&u.transpose()))
        .expect("square");
    let sym = full.add(&full.transpose()).expect("square").scale(0.5);
    (sym, clamped)
}

#[cfg(test)]
mod tests {
    use super::check::{assert_close, numeric_gradient};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.sigmoid(x);
        assert_eq!(t.value(y).item(), 0.5);
        assert_eq!(t.backward(y).unwrap().get(x).item(), 0.25);
    }

    #[test]
    fn sum_of_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::ones(&[2, 2]));
        let y = t.sum(x);
        assert_eq!(t.value(y).item(), 4.0);
        assert_eq!(t.backward(y).unwrap().get(x), Tensor::ones(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::ones(&[2, 2]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::ones(&[2, 2]));
        let b = t.leaf(Tensor::ones(&[2, 3]));
        assert!(matches!(t.add(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(t.matmul(b, a), Err(Error::Dimension { .. })));
        let r = t.leaf(Tensor::ones(&[1, 3]));
        assert!(t.add_row(a, r).is_err());
    }

    #[test]
    fn constants_and_unreachable_leaves_get_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::ones(&[3, 1]));
        let unused = t.leaf(Tensor::ones(&[2, 2]));
        let c = t.constant(Tensor::full(&[3, 1], 2.0));
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), Tensor::zeros(&[3, 1]));
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let d = t.detach(x);
        let y = t.mul(x, d).unwrap();
        assert_eq!(t.backward(y).unwrap().get(x).item(), 2.0);
    }

    #[test]
    fn backward_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new();
        let a = t.leaf(rand_t(&mut rng, &[4, 3], -1.0, 1.0));
        let b = t.leaf(rand_t(&mut rng, &[3, 2], -1.0, 1.0));
        let m = t.matmul(a, b).unwrap();
        let h = t.tanh(m);
        let l = t.sum(h);
        let g1 = t.backward(l).unwrap();
        let g2 = t.backward(l).unwrap();
        assert_eq!(g1.get(a), g2.get(a));
        assert_eq!(g1.get(b), g2.get(b));
    }

    /// Builds `sum(w ∘ op(inputs))` with fixed random weights `w`, so every
    /// output entry contributes to the checked gradient.
    fn weighted<F>(inputs: &[Tensor], seed: u64, op: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var> + Copy,
    {
        let build = move |t: &mut Tape, vars: &[Var]| -> Result<Var> {
            let out = op(t, vars)?;
            let shape = t.value(out).shape().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = t.constant(rand_t(&mut rng, &shape, -1.0, 1.0));
            let p = t.mul(out, w)?;
            Ok(t.sum(p))
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = build(&mut tape, &vars).unwrap();
        let grads = tape.backward(loss).unwrap();
        let numeric = numeric_gradient(inputs, 1e-5, |t, v| build(t, v)).unwrap();
        for (v, n) in vars.iter().zip(&numeric) {
            assert_close(&grads.get(*v), n, 1e-5, 1e-4);
        }
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for draw in 0..20u64 {
            let a = rand_t(&mut rng, &[3, 4], -2.0, 2.0);
            let b = rand_t(&mut rng, &[3, 4], -2.0, 2.0);
            let c = rand_t(&mut rng, &[4, 2], -2.0, 2.0);
            let r = rand_t(&mut rng, &[1, 4], -2.0, 2.0);
            let pos = rand_t(&mut rng, &[3, 4], 0.5, 3.0);
            let s = draw;
            weighted(&[a.clone(), b.clone()], s, |t, v| t.add(v[0], v[1]));
            weighted(&[a.clone(), b.clone()], s, |t, v| t.sub(v[0], v[1]));
            weighted(&[a.clone(), b.clone()], s, |t, v| t.mul(v[0], v[1]));
            weighted(&[a.clone(), c.clone()], s, |t, v| t.matmul(v[0], v[1]));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.sum(v[0])));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.mean(v[0])));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.exp(v[0])));
            weighted(std::slice::from_ref(&pos), s, |t, v| Ok(t.log(v[0])));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.tanh(v[0])));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.sigmoid(v[0])));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.softplus(v[0])));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.square(v[0])));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.abs(v[0])));
            weighted(std::slice::from_ref(&pos), s, |t, v| Ok(t.powf(v[0], -0.5)));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.scale(v[0], -1.7)));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.add_scalar(v[0], 0.3)));
            weighted(&[a.clone(), r.clone()], s, |t, v| t.add_row(v[0], v[1]));
            weighted(&[a.clone(), r.clone()], s, |t, v| t.mul_row(v[0], v[1]));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.mean_rows(v[0])));
            weighted(std::slice::from_ref(&a), s, |t, v| Ok(t.transpose(v[0])));
            weighted(std::slice::from_ref(&a), s, |t, v| t.slice_rows(v[0], 1, 3));
        }
    }

    fn random_sym_with_gap(rng: &mut ChaCha8Rng, d: usize, min_gap: f64) -> Tensor {
        loop {
            let a = rand_t(rng, &[d, d], -2.0, 2.0);
            let s = a.add(&a.transpose()).unwrap().scale(0.5);
            let e = sym_eig(&s).unwrap();
            if e.eigenvalues.windows(2).all(|w| w[0] - w[1] > min_gap) {
                return s;
            }
        }
    }

    #[test]
    fn eig_diagonal_case() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_diag(&[3.0, 1.0]));
        let (vals, _) = t.sym_eig(a).unwrap();
        let first = t.slice_rows(vals, 0, 1).unwrap();
        let mask = t.constant(Tensor::row_vector(vec![1.0, 0.0]).unwrap());
        let picked = t.mul(first, mask).unwrap();
        let l = t.sum(picked);
        let g = t.backward(l).unwrap().get(a);
        assert!((g.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(g.get(1, 1).abs() < 1e-12);
    }

    #[test]
    fn eig_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for draw in 0..20u64 {
            let a = random_sym_with_gap(&mut rng, 3, 0.5);
            // perturbations of single entries are re-symmetrized before the decomposition
            let sym = |t: &mut Tape, v: Var| -> Result<Var> {
                let tr = t.transpose(v);
                let s = t.add(v, tr)?;
                Ok(t.scale(s, 0.5))
            };
            weighted(std::slice::from_ref(&a), draw, |t, v| {
                let s = sym(t, v[0])?;
                Ok(t.sym_eig(s)?.0)
            });
            weighted(std::slice::from_ref(&a), draw + 100, |t, v| {
                let s = sym(t, v[0])?;
                Ok(t.sym_eig(s)?.1)
            });
        }
    }

    #[test]
    fn eig_degenerate_input_falls_back() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::eye(3));
        let (vals, vecs) = t.sym_eig(a).unwrap();
        let s1 = t.sum(vals);
        let s2 = t.square(vecs);
        let s2 = t.sum(s2);
        let l = t.add(s1, s2).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.degenerate_pairs(), 3);
        let ga = g.get(a);
        ga.check_finite().unwrap();
        // d(trace)/dA = I; the eigenvector part is clamped away
        assert!(ga.max_abs_diff(&Tensor::eye(3)) < 1e-12);
    }
}
