//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst relative discrepancy over all input entries.
    pub max_rel_error: f64,
}

/// Compares tape gradients against central finite differences.
///
/// `build` must record a scalar-valued computation of its input vars. Every
/// entry of every input is perturbed by `±step` and the analytic gradient is
/// compared as `|a - n| / max(1e-8, |a| + |n|)`; the maximum over all entries
/// is returned. Inputs the computation never uses contribute their numeric
/// derivative against an analytic zero.
pub fn grad_check<S, F>(build: F, inputs: &[Tensor<S>], step: f64) -> Result<GradCheck>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::Config("grad_check: step must be positive".into()));
    }
    let eval = |tensors: &[Tensor<S>]| -> Result<S> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        let out = build(&mut tape, &vars)?;
        tape.value(out).scalar()
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Shape(
            "grad_check: computation must produce a scalar".into(),
        ));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor<S>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    // Numeric passes.
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    let h = real::<S>(step);
    for (ti, tensor) in inputs.iter().enumerate() {
        for j in 0..tensor.len() {
            let orig = tensor.data()[j];
            work[ti].data_mut()[j] = orig + h;
            let up = eval(&work)?.to_real();
            work[ti].data_mut()[j] = orig - h;
            let down = eval(&work)?.to_real();
            work[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[ti].data()[j].to_real();
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
    })
}
