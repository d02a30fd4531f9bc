//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Upper bound on checked coordinates per input, picked with a fixed stride.
    pub max_coords: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_coords: usize::MAX }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose stencil crossed a relu kink.
    pub skipped: usize,
}

/// Relative error with a floor on the denominator so that two near-zero
/// values are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares `backward` against central differences of `f` around `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor], opts: GradCheckOptions, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape.value(loss).item(), tape.relu_pattern()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let pattern = tape.relu_pattern();

    let mut report = GradCheck::default();
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let n = inputs[i].numel();
        let stride = n.div_ceil(opts.max_coords.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + opts.step;
            let (lp, pp) = eval(&work)?;
            work[i].data_mut()[j] = x0 - opts.step;
            let (lm, pm) = eval(&work)?;
            work[i].data_mut()[j] = x0;
            if pp != pattern || pm != pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * opts.step);
            let analytic = grads.get(*var).map_or(0.0, |g| g.data()[j]);
            report.max_rel_error = report.max_rel_error.max(relative_error(analytic, numeric));
            report.checked += 1;
        }
    }
    Ok(report)
}
