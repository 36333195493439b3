use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic − fd| / max(1, |fd|)` over every parameter entry.
    pub max_rel_err: f64,
    /// `(param index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Central difference `(f(x+eps) − f(x−eps)) / 2eps` of a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Checks the gradients produced by [`Tape::backward`] for the scalar loss
/// built by `f` against central finite differences with step `eps`.
///
/// `f` receives a fresh tape and one leaf per entry of `params`, and must
/// return a scalar node.
pub fn grad_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-8, 1e-3]")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.constant(p.clone())).collect();
        let out = f(&mut t, &vs)?;
        Ok(t.value(out).item())
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let x0 = params[pi].data()[ei];
            work[pi].data_mut()[ei] = x0 + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[ei] = x0 - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[ei] = x0;
            let fd = (up - down) / (2.0 * eps);
            let err = (analytic[pi].data()[ei] - fd).abs() / fd.abs().max(1.0);
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = err;
                report.worst = (pi, ei);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
