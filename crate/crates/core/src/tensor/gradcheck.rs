use alloc::format;
use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over every scalar parameter.
    pub max_rel_error: f64,
    /// Worst relative error per checked tensor, in input order.
    pub per_tensor: Vec<f64>,
    /// Number of scalar entries compared.
    pub entries: usize,
}

/// Compares tape gradients of `f` against central differences.
///
/// `f` receives one leaf per tensor of `params` (all differentiable) and must
/// return a scalar. For every entry the relative error is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut work: Vec<Tensor> = params
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.set_requires_grad(true);
            t
        })
        .collect();

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = work.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        check_finite(tape.scalar(out))?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(&work)
            .map(|(&v, t)| {
                grads
                    .get(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| alloc::vec![0.0; t.numel()])
            })
            .collect()
    };

    let evaluate = |work: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = work.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        check_finite(tape.scalar(out))
    };

    let mut per_tensor = Vec::with_capacity(work.len());
    let mut entries = 0;
    for ti in 0..work.len() {
        let mut worst: f64 = 0.0;
        for j in 0..work[ti].numel() {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + eps;
            let plus = evaluate(&work)?;
            work[ti].data_mut()[j] = orig - eps;
            let minus = evaluate(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ti][j];
            let denom = libm::fabs(a).max(libm::fabs(numeric)).max(1e-8);
            worst = worst.max(libm::fabs(a - numeric) / denom);
            entries += 1;
        }
        per_tensor.push(worst);
    }
    let max_rel_error = per_tensor.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_tensor,
        entries,
    })
}

fn check_finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numeric(format!("objective evaluated to {x}")))
    }
}
