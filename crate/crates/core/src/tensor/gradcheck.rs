//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward function; it shares no
//! code with [`Tape::backward`](super::Tape::backward).

use rand::seq::index::sample;

use super::{Tape, Tensor, Var};
use crate::rng::Rng;
use crate::Result;

/// Largest discrepancy seen by [`check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Discrepancy between an analytic and a numeric derivative, relative to
/// their magnitude with an absolute floor of `1e-2` so that derivatives that
/// are zero analytically do not blow up on round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Compares `d f / d inputs` from the tape against central differences with
/// step `h`. `f` must build a scalar from the given leaf handles. When
/// `max_coords` is set only that many randomly chosen coordinates per input
/// are perturbed.
pub fn check<F>(f: F, inputs: &[Tensor], h: f64, max_coords: Option<(usize, &mut Rng)>) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut picker = max_coords;
    for (ti, t) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match &mut picker {
            Some((k, rng)) if *k < t.len() => {
                let mut c = sample(*rng, t.len(), *k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..t.len()).collect(),
        };
        for i in coords {
            let orig = t.data()[i];
            work[ti].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[ti].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[ti][i], numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
