//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Worst-case comparison between analytic and numeric gradients.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Name (or index) of the input holding the worst entry.
    pub worst: String,
    pub entries: usize,
}

/// Relative error with a floor on the denominator so that entries whose
/// true gradient is ~0 are judged on absolute error instead.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `build` (which records a scalar loss from the given inputs) against
/// central differences with step `h` on every entry of every input.
pub fn check<F>(inputs: &[(String, Tensor)], h: f64, floor: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut report = GradCheckReport::default();
    for (k, (name, _)) in inputs.iter().enumerate() {
        for i in 0..values[k].len() {
            let orig = values[k].data()[i];
            values[k].data_mut()[i] = orig + h;
            let up = eval(&values)?;
            values[k].data_mut()[i] = orig - h;
            let down = eval(&values)?;
            values[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k][i];
            let rel = rel_err(a, numeric, floor);
            report.entries += 1;
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}
