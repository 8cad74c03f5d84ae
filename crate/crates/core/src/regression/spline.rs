//! Restricted (natural) cubic spline basis in truncated-power form.

use crate::stats::{quantile_sorted, unique_sorted};

/// Default knot quantiles for a 4-knot basis.
pub const KNOT_QUANTILES: [f64; 4] = [0.05, 0.35, 0.65, 0.95];

/// Knots at the given quantiles of `values` (type-7), deduplicated.
pub fn knots(values: &[f64], quantiles: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    unique_sorted(quantiles.iter().map(|&q| quantile_sorted(&sorted, q)))
}

/// The `k - 2` nonlinear basis columns for knots `t_1 < ... < t_k`, each
/// linear beyond the outer knots, scaled by `(t_k - t_1)^2`.
pub fn rcs_basis(x: f64, knots: &[f64]) -> Vec<f64> {
    let k = knots.len();
    if k < 3 {
        return Vec::new();
    }
    let cube = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
    let (tk1, tk) = (knots[k - 2], knots[k - 1]);
    let norm = (tk - knots[0]).powi(2);
    (0..k - 2)
        .map(|j| {
            let tj = knots[j];
            (cube(x - tj) - cube(x - tk1) * (tk - tj) / (tk - tk1)
                + cube(x - tk) * (tk1 - tj) / (tk - tk1))
                / norm
        })
        .collect()
}
