//! Central finite-difference verification of reverse-mode gradients.
//!
//! Only forward evaluations are used for the numeric side, so the check is
//! independent of every backward rule it verifies.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Elementwise relative error with a small absolute floor so that entries
/// whose true gradient is zero do not divide by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn merge(&mut self, input: usize, element: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = (input, element);
        }
        self.checked += 1;
    }
}

/// Compares `backward` against central differences with step `h` for every
/// element of every input. `f` must be deterministic.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            tape.grad(*v)
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let v = tape.value(loss).item();
        Ok(v)
    };

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            report.merge(i, e, analytic[i].data()[e], numeric);
        }
    }
    Ok(report)
}
