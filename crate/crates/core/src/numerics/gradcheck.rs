//! Central-difference gradient checking.

use super::Params;
use crate::error::{Error, Result};

/// Relative error is `|a - n| / max(|a|, |n|, abs_floor)`; coordinates whose
/// gradients are both below `abs_floor` are compared in absolute terms.
pub const DEFAULT_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (tensor index, element index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares `analytic` against central differences of `loss_fn` around
/// `params`, coordinate by coordinate.
pub fn grad_check<P, F>(
    mut loss_fn: F,
    params: &P,
    analytic: &P,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    P: Params + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    grad_check_with_floor(&mut loss_fn, params, analytic, epsilon, tolerance, DEFAULT_ABS_FLOOR)
}

pub fn grad_check_with_floor<P, F>(
    loss_fn: &mut F,
    params: &P,
    analytic: &P,
    epsilon: f64,
    tolerance: f64,
    abs_floor: f64,
) -> Result<GradCheckReport>
where
    P: Params + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let analytic_t = analytic.tensors();
    if analytic_t.len() != shapes.len() {
        return Err(Error::shape("grad_check tensor count", shapes.len(), analytic_t.len()));
    }
    for (s, a) in shapes.iter().zip(&analytic_t) {
        if *s != a.len() {
            return Err(Error::shape("grad_check tensor length", *s, a.len()));
        }
    }

    let finite = |v: f64| -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("loss is not finite ({v})")))
        }
    };
    finite(loss_fn(params)?)?;

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates: 0,
        tolerance,
    };
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + epsilon;
            let plus = finite(loss_fn(&probe)?)?;
            probe.tensors_mut()[t][i] = orig - epsilon;
            let minus = finite(loss_fn(&probe)?)?;
            probe.tensors_mut()[t][i] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic_t[t][i];
            let denom = a.abs().max(numeric.abs()).max(abs_floor);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((t, i));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
