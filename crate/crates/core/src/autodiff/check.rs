//! Central finite-difference gradients, used as an independent oracle for
//! [`Tape::backward`](super::Tape::backward).

use super::{Tape, Var};
use crate::error::Result;
use crate::linalg::Tensor;

/// Evaluates `build` on a fresh tape with `inputs` as leaves and returns the
/// scalar loss.
pub fn evaluate<F>(inputs: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    Ok(tape.value(loss).item())
}

/// Central differences `(f(x + h e_j) − f(x − h e_j)) / 2h` for every entry
/// of every input.
pub fn numeric_gradient<F>(inputs: &[Tensor], h: f64, build: F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = evaluate(&work, &build)?;
            work[i].data_mut()[j] = orig - h;
            let down = evaluate(&work, &build)?;
            work[i].data_mut()[j] = orig;
            *gj = (up - down) / (2.0 * h);
        }
        out.push(Tensor::from_raw(inputs[i].shape().to_vec(), g));
    }
    Ok(out)
}

/// Largest violation of `|a − b| <= max(abs_tol, rel_tol · max(|a|, |b|))`,
/// expressed as a ratio to the allowed error (`<= 1` passes).
pub fn tolerance_ratio(analytic: &Tensor, numeric: &Tensor, abs_tol: f64, rel_tol: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| {
            let allowed = abs_tol.max(rel_tol * a.abs().max(n.abs()));
            (a - n).abs() / allowed
        })
        .fold(0.0, f64::max)
}

/// Panics with a readable message when [`tolerance_ratio`] exceeds one.
pub fn assert_close(analytic: &Tensor, numeric: &Tensor, abs_tol: f64, rel_tol: f64) {
    assert_eq!(analytic.shape(), numeric.shape());
    let r = tolerance_ratio(analytic, numeric, abs_tol, rel_tol);
    assert!(
        r <= 1.0,
        "gradient mismatch (ratio {r:.3}):\n analytic {analytic:?}\n numeric  {numeric:?}"
    );
}
