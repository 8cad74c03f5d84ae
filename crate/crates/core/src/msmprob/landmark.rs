//! Landmark and presmoothed-landmark estimators for the illness-death model.

use nalgebra::{Matrix2, Vector2};

use super::curve::{resolve_grid, Method, ProbabilityCurve};
use crate::data::ValidatedIdmData;
use crate::error::Result;
use crate::survival::ProductLimit;

/// Subjects in state 1 at `s` (`T1 > s`) and in state 2 at `s` (`T1 <= s < T`, ill).
pub(crate) fn landmark_sets(d: &ValidatedIdmData, s: f64) -> (Vec<usize>, Vec<usize>) {
    let s1 = (0..d.len()).filter(|&i| d.time1[i] > s).collect();
    let s2 = (0..d.len())
        .filter(|&i| d.event1[i] && d.time1[i] <= s && s < d.stime[i])
        .collect();
    (s1, s2)
}

/// Event indicator of leaving state 1 (illness or direct death).
pub(crate) fn exit1(d: &ValidatedIdmData, i: usize) -> bool {
    d.event1[i] || d.event[i]
}

/// Logistic regression of `y` on `(1, x)` by iteratively reweighted least squares.
/// `None` when the fit does not settle (separation).
pub(crate) fn logistic_fit(x: &[f64], y: &[bool]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = x
        .iter()
        .map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 })
        .collect();
    let mut beta = Vector2::<f64>::zeros();
    let mut dev_old = f64::INFINITY;
    for _ in 0..100 {
        let mut xtwx = Matrix2::zeros();
        let mut xtwz = Vector2::zeros();
        let mut dev = 0.0;
        for (k, &zk) in z.iter().enumerate() {
            let eta = beta[0] + beta[1] * zk;
            let mu = 1.0 / (1.0 + (-eta).exp());
            let w = (mu * (1.0 - mu)).max(1e-12);
            let yk = if y[k] { 1.0 } else { 0.0 };
            let work = eta + (yk - mu) / w;
            let v = Vector2::new(1.0, zk);
            xtwx += v * v.transpose() * w;
            xtwz += v * (w * work);
            dev -= 2.0
                * if y[k] {
                    mu.max(1e-300).ln()
                } else {
                    (1.0 - mu).max(1e-300).ln()
                };
        }
        if (dev_old - dev).abs() < 1e-10 * (dev.abs() + 0.1) {
            let fitted: Vec<f64> = z
                .iter()
                .map(|&zk| 1.0 / (1.0 + (-(beta[0] + beta[1] * zk)).exp()))
                .collect();
            let extreme = z.iter().any(|&zk| (beta[0] + beta[1] * zk).abs() > 30.0);
            return (!extreme).then_some(fitted);
        }
        dev_old = dev;
        beta = xtwx.try_inverse()? * xtwz;
    }
    None
}

/// Event masses for a product-limit fit: raw indicators (LM) or
/// logistic-presmoothed ones (PLM). The flag reports a degenerate
/// presmoothing step that fell back to raw indicators.
fn event_mass(time: &[f64], event: &[bool], presmooth: bool) -> (Vec<f64>, bool) {
    let raw: Vec<f64> = event.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
    if !presmooth {
        return (raw, false);
    }
    let n_events = event.iter().filter(|&&e| e).count();
    if n_events == event.len() || n_events == 0 {
        return (raw, true);
    }
    match logistic_fit(time, event) {
        Some(m) => (m, false),
        None => (raw, true),
    }
}

fn survival_on(time: &[f64], event: &[bool], presmooth: bool, grid: &[f64]) -> (Vec<f64>, bool) {
    let (mass, degenerate) = event_mass(time, event, presmooth);
    let pl = ProductLimit::fit(time, &mass, None);
    (grid.iter().map(|&t| pl.at(t)).collect(), degenerate)
}

fn landmark_impl(
    d: &ValidatedIdmData,
    s: f64,
    grid: Option<&[f64]>,
    presmooth: bool,
) -> Result<Vec<ProbabilityCurve>> {
    let method = if presmooth { Method::Plm } else { Method::Lm };
    let events = (0..d.len()).flat_map(|i| {
        let a = exit1(d, i).then_some(d.time1[i]);
        let b = (d.event[i] && d.event1[i]).then_some(d.stime[i]);
        a.into_iter().chain(b)
    });
    let grid = resolve_grid(grid, events, s)?;
    let (s1, s2) = landmark_sets(d, s);
    let flag = if presmooth {
        "presmoothing_degenerate"
    } else {
        ""
    };
    let mut out = Vec::with_capacity(5);

    if s1.is_empty() {
        let nan = vec![f64::NAN; grid.len()];
        for j in 1..=3 {
            let mut c = ProbabilityCurve::new(method, s, 1, j, &grid, &nan);
            c.flag("empty_landmark_set");
            out.push(c);
        }
    } else {
        let t1: Vec<f64> = s1.iter().map(|&i| d.time1[i]).collect();
        let e1: Vec<bool> = s1.iter().map(|&i| exit1(d, i)).collect();
        let t: Vec<f64> = s1.iter().map(|&i| d.stime[i]).collect();
        let e: Vec<bool> = s1.iter().map(|&i| d.event[i]).collect();
        let (p11, deg1) = survival_on(&t1, &e1, presmooth, &grid);
        let (surv, deg2) = survival_on(&t, &e, presmooth, &grid);
        let mut clamped = false;
        let mut p12 = Vec::with_capacity(grid.len());
        let mut p13 = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let v = 1.0 - p11[k] - (1.0 - surv[k]);
            if v < 0.0 {
                clamped = true;
                p12.push(0.0);
                p13.push(1.0 - p11[k]);
            } else {
                p12.push(v);
                p13.push(1.0 - surv[k]);
            }
        }
        for (j, est) in [(1, &p11), (2, &p12), (3, &p13)] {
            let mut c = ProbabilityCurve::new(method, s, 1, j, &grid, est);
            if clamped {
                c.flag("p12_clamped");
            }
            if deg1 || deg2 {
                c.flag(flag);
            }
            out.push(c);
        }
    }

    if s2.is_empty() {
        let nan = vec![f64::NAN; grid.len()];
        for j in 2..=3 {
            let mut c = ProbabilityCurve::new(method, s, 2, j, &grid, &nan);
            c.flag("empty_landmark_set");
            out.push(c);
        }
    } else {
        let t: Vec<f64> = s2.iter().map(|&i| d.stime[i]).collect();
        let e: Vec<bool> = s2.iter().map(|&i| d.event[i]).collect();
        let (p22, deg) = survival_on(&t, &e, presmooth, &grid);
        let p23: Vec<f64> = p22.iter().map(|v| 1.0 - v).collect();
        for (j, est) in [(2, &p22), (3, &p23)] {
            let mut c = ProbabilityCurve::new(method, s, 2, j, &grid, est);
            if deg {
                c.flag(flag);
            }
            out.push(c);
        }
    }
    Ok(out)
}

/// Landmark estimator: product-limit fits on the subjects in each state at `s`.
pub fn landmark_idm(
    d: &ValidatedIdmData,
    s: f64,
    grid: Option<&[f64]>,
) -> Result<Vec<ProbabilityCurve>> {
    landmark_impl(d, s, grid, false)
}

/// Landmark estimator with event indicators replaced by logistic fitted values.
pub fn presmoothed_landmark_idm(
    d: &ValidatedIdmData,
    s: f64,
    grid: Option<&[f64]>,
) -> Result<Vec<ProbabilityCurve>> {
    landmark_impl(d, s, grid, true)
}
