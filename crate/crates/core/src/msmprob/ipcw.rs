//! Kernel-weighted inverse-probability-of-censoring estimators conditional on
//! one continuous covariate, and cumulative incidence of illness.

use super::curve::{resolve_grid, CifCurve, Conditioning, GridPoint, Method, ProbabilityCurve};
use super::landmark::{exit1, landmark_sets};
use crate::data::{CovariateValues, ValidatedIdmData};
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sd};
use crate::survival::ProductLimit;

/// Gaussian kernel weights around `x0` for the subjects with a value.
pub(crate) struct KernelWeights {
    pub weights: Vec<f64>,
    pub bandwidth: f64,
    pub extrapolating: bool,
}

pub(crate) fn kernel_weights(
    d: &ValidatedIdmData,
    covariate: &str,
    x0: f64,
    bandwidth: Option<f64>,
) -> Result<KernelWeights> {
    let col = d.covariates.get(covariate)?;
    let CovariateValues::Numeric(values) = &col.values else {
        return Err(Error::InvalidParameter(format!(
            "`{covariate}` is not a continuous covariate"
        )));
    };
    let mut present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "`{covariate}` has no values"
        )));
    }
    present.sort_by(f64::total_cmp);
    let (min, max) = (present[0], present[present.len() - 1]);
    if !(x0 >= min && x0 <= max) {
        return Err(Error::InvalidParameter(format!(
            "value {x0} is outside the observed range [{min}, {max}] of `{covariate}`"
        )));
    }
    let h = match bandwidth {
        Some(h) if !(h > 0.0) => return Err(Error::BandwidthNonPositive),
        Some(h) => h,
        None => 1.06 * sd(&present) * (present.len() as f64).powf(-0.2),
    };
    let extrapolating =
        x0 < quantile_sorted(&present, 0.05) || x0 > quantile_sorted(&present, 0.95);
    let weights = values
        .iter()
        .map(|v| match v {
            None => 0.0,
            Some(x) if *x == x0 => 1.0,
            Some(x) if h > 0.0 => (-0.5 * ((x - x0) / h).powi(2)).exp(),
            Some(_) => 0.0,
        })
        .collect();
    Ok(KernelWeights {
        weights,
        bandwidth: h,
        extrapolating,
    })
}

/// Censoring survivor function from the reverse product-limit fit of the
/// final follow-up times.
pub(crate) fn censoring_survival(d: &ValidatedIdmData) -> ProductLimit {
    let mass: Vec<f64> = d.event.iter().map(|&e| if e { 0.0 } else { 1.0 }).collect();
    ProductLimit::fit(&d.stime, &mass, None)
}

/// Inverse-probability weight of subject `i` whose state at `t` is known,
/// or `None` when censoring hides it.
fn ipc_weight(d: &ValidatedIdmData, g: &ProductLimit, i: usize, t: f64) -> Option<f64> {
    let w = if d.stime[i] > t {
        g.at(t)
    } else if d.event[i] {
        g.before(d.stime[i])
    } else {
        return None;
    };
    (w > 0.0).then(|| 1.0 / w)
}

/// State at `t` of subject `i`, assuming it is known.
fn state_at(d: &ValidatedIdmData, i: usize, t: f64) -> usize {
    if d.stime[i] <= t {
        3
    } else if d.event1[i] && d.time1[i] <= t {
        2
    } else {
        1
    }
}

/// Normalized weighted occupancy of each state at each grid time.
fn weighted_row(
    d: &ValidatedIdmData,
    g: &ProductLimit,
    set: &[usize],
    kernel: &[f64],
    grid: &[f64],
    states: &[usize],
) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(grid.len()); states.len()];
    for &t in grid {
        let mut num = vec![0.0; states.len()];
        for &i in set {
            if kernel[i] == 0.0 {
                continue;
            }
            if let Some(w) = ipc_weight(d, g, i, t) {
                let st = state_at(d, i, t);
                if let Some(k) = states.iter().position(|&s| s == st) {
                    num[k] += kernel[i] * w;
                }
            }
        }
        let total: f64 = num.iter().sum();
        for (k, v) in num.iter().enumerate() {
            out[k].push(if total > 0.0 { v / total } else { f64::NAN });
        }
    }
    out
}

fn idm_event_times(d: &ValidatedIdmData) -> Vec<f64> {
    (0..d.len())
        .flat_map(|i| {
            let a = exit1(d, i).then_some(d.time1[i]);
            let b = (d.event[i] && d.event1[i]).then_some(d.stime[i]);
            a.into_iter().chain(b)
        })
        .collect()
}

/// `p_hj(s, t | x = x0)` for rows 1 and 2 of the illness-death model.
pub fn ipcw_conditional(
    d: &ValidatedIdmData,
    s: f64,
    grid: Option<&[f64]>,
    covariate: &str,
    x0: f64,
    bandwidth: Option<f64>,
) -> Result<Vec<ProbabilityCurve>> {
    let grid = resolve_grid(grid, idm_event_times(d), s)?;
    let kw = kernel_weights(d, covariate, x0, bandwidth)?;
    let g = censoring_survival(d);
    let (s1, s2) = landmark_sets(d, s);
    let conditioning = Conditioning::Continuous {
        covariate: covariate.to_string(),
        value: x0,
        bandwidth: kw.bandwidth,
    };
    let mut out = Vec::with_capacity(5);
    for (h, set, states) in [(1, &s1, vec![1, 2, 3]), (2, &s2, vec![2, 3])] {
        let est = weighted_row(d, &g, set, &kw.weights, &grid, &states);
        let empty = set.iter().all(|&i| kw.weights[i] == 0.0);
        for (k, &j) in states.iter().enumerate() {
            let mut c = ProbabilityCurve::new(Method::Ipcw, s, h, j, &grid, &est[k]);
            c.conditioning = Some(conditioning.clone());
            if empty {
                c.flag("empty_landmark_set");
            }
            if kw.extrapolating {
                c.flag("extrapolation");
            }
            if est[k].iter().any(|v| v.is_nan()) && !empty {
                c.flag("no_effective_weight");
            }
            out.push(c);
        }
    }
    Ok(out)
}

/// Conditioning for the cumulative incidence of illness.
#[derive(Debug, Clone, PartialEq)]
pub enum CifConditioning {
    None,
    Level {
        covariate: String,
        level: String,
    },
    Continuous {
        covariate: String,
        value: f64,
        bandwidth: Option<f64>,
    },
}

/// Aalen-Johansen cumulative incidences of leaving state 1 to 2 and to 3, and
/// the probability of remaining in 1, at each grid time.
pub(crate) fn competing_cifs(
    d: &ValidatedIdmData,
    rows: &[usize],
    grid: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = rows.to_vec();
    order.sort_by(|&a, &b| d.time1[a].total_cmp(&d.time1[b]));
    let mut at_risk = order.len() as f64;
    let (mut surv, mut c2, mut c3) = (1.0, 0.0, 0.0);
    let mut steps: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let t = d.time1[order[k]];
        let (mut d2, mut d3, mut leaving) = (0.0, 0.0, 0.0);
        while k < order.len() && d.time1[order[k]] == t {
            let i = order[k];
            if d.event1[i] {
                d2 += 1.0;
            } else if d.event[i] {
                d3 += 1.0;
            }
            leaving += 1.0;
            k += 1;
        }
        if d2 + d3 > 0.0 {
            c2 += surv * d2 / at_risk;
            c3 += surv * d3 / at_risk;
            surv *= 1.0 - (d2 + d3) / at_risk;
            steps.push((t, c2, c3, surv));
        }
        at_risk -= leaving;
    }
    let mut a = Vec::with_capacity(grid.len());
    let mut b = Vec::with_capacity(grid.len());
    let mut c = Vec::with_capacity(grid.len());
    for &t in grid {
        let n = steps.partition_point(|x| x.0 <= t);
        let (v2, v3, s) = if n == 0 {
            (0.0, 0.0, 1.0)
        } else {
            (steps[n - 1].1, steps[n - 1].2, steps[n - 1].3)
        };
        a.push(v2);
        b.push(v3);
        c.push(s);
    }
    (a, b, c)
}

/// Probability of having entered the intermediate state by each grid time.
pub fn cif(
    d: &ValidatedIdmData,
    grid: Option<&[f64]>,
    conditioning: &CifConditioning,
) -> Result<CifCurve> {
    let entries = (0..d.len()).filter(|&i| d.event1[i]).map(|i| d.time1[i]);
    let grid = resolve_grid(grid, entries, 0.0)?;
    let mut flags = Vec::new();
    let (est, cond) = match conditioning {
        CifConditioning::None => {
            let rows: Vec<usize> = (0..d.len()).collect();
            (competing_cifs(d, &rows, &grid).0, None)
        }
        CifConditioning::Level { covariate, level } => {
            let col = d.covariates.get(covariate)?;
            let rows: Vec<usize> = (0..d.len())
                .filter(|&i| col.label(i).as_deref() == Some(level.as_str()))
                .collect();
            if rows.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "no rows with {covariate} = {level}"
                )));
            }
            (
                competing_cifs(d, &rows, &grid).0,
                Some(Conditioning::Level {
                    covariate: covariate.clone(),
                    level: level.clone(),
                }),
            )
        }
        CifConditioning::Continuous {
            covariate,
            value,
            bandwidth,
        } => {
            let kw = kernel_weights(d, covariate, *value, *bandwidth)?;
            if kw.extrapolating {
                flags.push("extrapolation".to_string());
            }
            let g = censoring_survival(d);
            let est = grid
                .iter()
                .map(|&t| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for i in 0..d.len() {
                        let k = kw.weights[i];
                        if k == 0.0 {
                            continue;
                        }
                        // Known to have entered, known to have died first, or still in state 1.
                        let w = if d.event1[i] && d.time1[i] <= t {
                            g.before(d.time1[i])
                        } else if !d.event1[i] && d.event[i] && d.stime[i] <= t {
                            g.before(d.stime[i])
                        } else if d.time1[i] > t {
                            g.at(t)
                        } else {
                            continue;
                        };
                        if w <= 0.0 {
                            continue;
                        }
                        den += k / w;
                        if d.event1[i] && d.time1[i] <= t {
                            num += k / w;
                        }
                    }
                    if den > 0.0 {
                        num / den
                    } else {
                        f64::NAN
                    }
                })
                .collect();
            (
                est,
                Some(Conditioning::Continuous {
                    covariate: covariate.clone(),
                    value: *value,
                    bandwidth: kw.bandwidth,
                }),
            )
        }
    };
    Ok(CifCurve {
        grid: grid
            .iter()
            .zip(est)
            .map(|(&t, e)| GridPoint {
                t,
                est: e,
                lower: None,
                upper: None,
            })
            .collect(),
        n_boot: 0,
        flags,
        conditioning: cond,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariate, CovariateTable};
    use crate::msmprob::landmark::landmark_idm;

    fn idm_with(rows: &[(f64, bool, f64, bool)], x: &[f64]) -> ValidatedIdmData {
        let cov = Covariate {
            name: "x".into(),
            values: CovariateValues::Numeric(x.iter().map(|&v| Some(v)).collect()),
        };
        ValidatedIdmData::from_vectors(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            rows.iter().map(|r| r.3).collect(),
            CovariateTable::new(vec![cov], rows.len()),
        )
        .unwrap()
    }

    const ROWS: [(f64, bool, f64, bool); 8] = [
        (1.0, true, 4.0, true),
        (2.0, false, 2.0, true),
        (3.0, true, 6.0, false),
        (2.5, false, 2.5, false),
        (3.0, true, 5.0, true),
        (4.0, false, 4.0, true),
        (5.0, true, 8.0, true),
        (6.0, false, 6.0, false),
    ];

    #[test]
    fn huge_bandwidth_equals_unweighted() {
        let x = [40.0, 50.0, 60.0, 45.0, 55.0, 65.0, 48.0, 52.0];
        let d = idm_with(&ROWS, &x);
        let grid = [3.0, 5.0, 7.0];
        let wide = ipcw_conditional(&d, 1.5, Some(&grid), "x", 50.0, Some(1e12)).unwrap();
        let flat = idm_with(&ROWS, &[50.0; 8]);
        let unw = ipcw_conditional(&flat, 1.5, Some(&grid), "x", 50.0, None).unwrap();
        for (a, b) in wide.iter().zip(&unw) {
            for (p, q) in a.grid.iter().zip(&b.grid) {
                assert!((p.est - q.est).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uncensored_unweighted_equals_landmark() {
        let rows: Vec<_> = ROWS.iter().map(|&(a, b, c, _)| (a, b, c, true)).collect();
        let d = idm_with(&rows, &[1.0; 8]);
        let grid = [3.0, 4.5, 6.0, 9.0];
        let ipcw = ipcw_conditional(&d, 1.5, Some(&grid), "x", 1.0, None).unwrap();
        let lm = landmark_idm(&d, 1.5, Some(&grid)).unwrap();
        for c in &ipcw {
            let l = lm
                .iter()
                .find(|x| x.from == c.from && x.to == c.to)
                .unwrap();
            for (p, q) in c.grid.iter().zip(&l.grid) {
                assert!(
                    (p.est - q.est).abs() < 1e-12,
                    "{} {} {} {}",
                    c.from,
                    c.to,
                    p.est,
                    q.est
                );
            }
        }
    }

    #[test]
    fn rows_sum_to_one_and_range_checked() {
        let x = [40.0, 50.0, 60.0, 45.0, 55.0, 65.0, 48.0, 52.0];
        let d = idm_with(&ROWS, &x);
        let est = ipcw_conditional(&d, 1.5, Some(&[3.0, 5.0]), "x", 47.0, Some(5.0)).unwrap();
        for h in 1..=2 {
            for k in 0..2 {
                let sum: f64 = est
                    .iter()
                    .filter(|c| c.from == h)
                    .map(|c| c.grid[k].est)
                    .sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        assert!(ipcw_conditional(&d, 1.5, None, "x", 70.0, None).is_err());
        assert_eq!(
            ipcw_conditional(&d, 1.5, None, "x", 50.0, Some(0.0)).unwrap_err(),
            Error::BandwidthNonPositive
        );
    }

    #[test]
    fn competing_risk_partition() {
        let d = idm_with(&ROWS, &[0.0; 8]);
        let rows: Vec<usize> = (0..8).collect();
        let grid = [0.5, 2.0, 2.5, 3.0, 5.0, 10.0];
        let (a, b, c) = competing_cifs(&d, &rows, &grid);
        for k in 0..grid.len() {
            assert!((a[k] + b[k] + c[k] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn uncensored_cif_is_ever_ill_fraction() {
        let rows: Vec<_> = ROWS.iter().map(|&(a, b, c, _)| (a, b, c, true)).collect();
        let d = idm_with(&rows, &[0.0; 8]);
        let c = cif(&d, Some(&[100.0]), &CifConditioning::None).unwrap();
        assert_eq!(c.grid[0].est, 4.0 / 8.0);
        let first = cif(&d, None, &CifConditioning::None).unwrap();
        assert!(first.grid.windows(2).all(|w| w[0].est <= w[1].est));
    }
}
