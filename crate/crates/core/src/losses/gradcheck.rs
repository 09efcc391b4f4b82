use alloc::vec::Vec;

#[allow(unused_imports)] // resolves inherently whenever std is linked
use num_traits::Float;

use crate::error::{Error, Result};

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Loss at the unperturbed parameters.
    pub loss: f64,
    pub max_rel_err: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

/// Denominator floor so coordinates with tiny gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-8;

/// Compares the analytic gradient returned by `f` against central differences
/// with step `step`, coordinate by coordinate. Coordinates for which `skip`
/// returns true (typically near a kink of an L1 term) are not compared.
pub fn grad_check<F, S>(mut f: F, params: &[f64], step: f64, tolerance: f64, skip: S) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    S: Fn(usize) -> bool,
{
    if !(step > 0.0) || !(tolerance > 0.0) {
        return Err(Error::InvalidConfig("step and tolerance must be positive"));
    }
    let (loss, analytic) = f(params);
    if analytic.len() != params.len() {
        return Err(Error::SpecMismatch);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { coordinate: None });
    }
    let mut probe = params.to_vec();
    let mut report =
        GradCheckReport { loss, max_rel_err: 0.0, worst_coordinate: None, checked: 0, skipped: 0, passed: true };
    for j in 0..params.len() {
        if skip(j) {
            report.skipped += 1;
            continue;
        }
        probe[j] = params[j] + step;
        let (up, _) = f(&probe);
        probe[j] = params[j] - step;
        let (down, _) = f(&probe);
        probe[j] = params[j];
        let numeric = (up - down) / (2.0 * step);
        if !numeric.is_finite() || !analytic[j].is_finite() {
            return Err(Error::NonFinite { coordinate: Some(j) });
        }
        let err = (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(REL_FLOOR);
        report.checked += 1;
        if err > report.max_rel_err || report.worst_coordinate.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst_coordinate = Some(j);
        }
    }
    report.passed = report.max_rel_err <= tolerance;
    Ok(report)
}
