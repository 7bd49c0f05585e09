use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;

/// Denominator floor for the relative error. Coordinates whose gradient is
/// below it are effectively judged by absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `objective` at `params`.
///
/// Checks every coordinate when there are at most `max(sample, 200)` of them,
/// otherwise a seeded sample of that many.
pub fn grad_check(
    mut objective: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    tolerance: f64,
    sample: usize,
    seed: u64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let budget = sample.max(200);
    let coords: Vec<usize> = if params.len() <= budget {
        (0..params.len()).collect()
    } else {
        let mut c = index::sample(&mut rng_from_seed(seed), params.len(), budget).into_vec();
        c.sort_unstable();
        c
    };
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: coords.len(),
        tolerance,
        passed: true,
    };
    for &k in &coords {
        let orig = work[k];
        work[k] = orig + eps;
        let up = objective(&work);
        work[k] = orig - eps;
        let down = objective(&work);
        work[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst_index = k;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    report.passed = report.max_rel_error < tolerance;
    report
}
