//! Score test of proportional hazards against a coefficient linear in g(t).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cox::{tied_moments, CoxData, CoxFit, RiskSweep};
use crate::error::{Error, Result};
use crate::stats::chi2_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeTransform {
    #[default]
    Km,
    Identity,
    Log,
}

impl std::str::FromStr for TimeTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "km" => Ok(TimeTransform::Km),
            "identity" => Ok(TimeTransform::Identity),
            "log" => Ok(TimeTransform::Log),
            other => Err(Error::InvalidParameter(format!(
                "unknown time transform `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhRow {
    pub term: String,
    pub chi_squared: f64,
    pub df: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhTestResult {
    /// One row per term, then the `GLOBAL` row.
    pub rows: Vec<PhRow>,
    pub time_transform: TimeTransform,
}

impl PhTestResult {
    pub fn global(&self) -> &PhRow {
        self.rows.last().expect("global row")
    }
}

/// Tests each term (a group of design columns) and all terms jointly.
/// An empty `terms` list tests each column on its own.
pub fn ph_test(
    data: &CoxData,
    fit: &CoxFit,
    terms: &[(String, Vec<usize>)],
    transform: TimeTransform,
) -> Result<PhTestResult> {
    let p = data.p();
    let events = data.n_events();
    if events < p + 2 {
        return Err(Error::TooFewEvents {
            events,
            required: p + 2,
        });
    }
    if !fit.converged && fit.iterations > 0 {
        return Err(Error::Diverged("PH test needs a converged fit".into()));
    }
    let terms: Vec<(String, Vec<usize>)> = if terms.is_empty() {
        data.names
            .iter()
            .enumerate()
            .map(|(j, n)| (n.clone(), vec![j]))
            .collect()
    } else {
        terms.to_vec()
    };

    let sweep = RiskSweep::new(data);
    let beta = DVector::from_column_slice(&fit.coef);
    let centre = DVector::from_fn(p, |j, _| data.x.column(j).mean());
    let eta: Vec<f64> = (0..data.n())
        .map(|i| (data.x.row(i).transpose() - &centre).dot(&beta))
        .collect();

    // Per event time: (time, deaths, n_risk, x-sum minus tied means, tied variance).
    let mut per_time = Vec::new();
    sweep.visit(&eta, |e| {
        let (_, mean_sum, var_sum) = tied_moments(&e, fit.ties);
        let mut resid = -mean_sum;
        for &i in e.deaths {
            resid += data.x.row(i).transpose();
        }
        per_time.push((e.time, e.deaths.len(), e.n_risk, resid, var_sum));
    });
    per_time.reverse();

    let mut surv = 1.0;
    let mut g = Vec::with_capacity(per_time.len());
    for (t, d, n_risk, _, _) in &per_time {
        g.push(match transform {
            TimeTransform::Km => 1.0 - surv,
            TimeTransform::Identity => *t,
            TimeTransform::Log => t.ln(),
        });
        surv *= 1.0 - *d as f64 / *n_risk as f64;
    }

    let mut u = DVector::zeros(2 * p);
    let mut imat = DMatrix::zeros(2 * p, 2 * p);
    for (k, (_, _, _, resid, var)) in per_time.iter().enumerate() {
        let gk = g[k];
        u.rows_mut(p, p).axpy(gk, resid, 1.0);
        for a in 0..p {
            for b in 0..p {
                let v = var[(a, b)];
                imat[(a, b)] += v;
                imat[(a, p + b)] += gk * v;
                imat[(p + a, b)] += gk * v;
                imat[(p + a, p + b)] += gk * gk * v;
            }
        }
    }

    let score_test = |gamma_cols: &[usize]| -> Result<f64> {
        let idx: Vec<usize> = (0..p).chain(gamma_cols.iter().map(|c| p + c)).collect();
        let m = idx.len();
        let sub = DMatrix::from_fn(m, m, |a, b| imat[(idx[a], idx[b])]);
        let rhs = DVector::from_fn(m, |a, _| if a < p { 0.0 } else { u[idx[a]] });
        let sol = sub
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| sub.lu().solve(&rhs))
            .ok_or(Error::SingularInformation)?;
        Ok(rhs.dot(&sol))
    };

    let mut rows = Vec::with_capacity(terms.len() + 1);
    for (name, cols) in &terms {
        let stat = score_test(cols)?;
        rows.push(PhRow {
            term: name.clone(),
            chi_squared: stat,
            df: cols.len(),
            p: chi2_sf(stat, cols.len()),
        });
    }
    let all: Vec<usize> = terms.iter().flat_map(|(_, c)| c.iter().copied()).collect();
    let stat = score_test(&all)?;
    rows.push(PhRow {
        term: "GLOBAL".into(),
        chi_squared: stat,
        df: all.len(),
        p: chi2_sf(stat, all.len()),
    });
    Ok(PhTestResult {
        rows,
        time_transform: transform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::cox::{fit_cox, Ties};

    /// Log partial likelihood of `beta * x + gamma * x * g(t)`, evaluated
    /// directly from risk sets (untied right-censored data).
    fn extended_loglik(
        time: &[f64],
        status: &[bool],
        x: &[f64],
        g: &dyn Fn(f64) -> f64,
        beta: f64,
        gamma: f64,
    ) -> f64 {
        let mut ll = 0.0;
        for i in 0..time.len() {
            if status[i] {
                let coef = beta + gamma * g(time[i]);
                let denom: f64 = (0..time.len())
                    .filter(|&k| time[k] >= time[i])
                    .map(|k| (coef * x[k]).exp())
                    .sum();
                ll += coef * x[i] - denom.ln();
            }
        }
        ll
    }

    #[test]
    fn matches_finite_difference_score_test() {
        let time = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let status = [true, true, false, true, true, true, false, true];
        let x = [1.0, 0.5, 2.0, -1.0, 0.0, 1.5, 0.3, -0.5];
        let d = CoxData::right_censored(
            time.to_vec(),
            status.to_vec(),
            DMatrix::from_column_slice(8, 1, &x),
            vec!["x".into()],
        )
        .unwrap();
        let fit = fit_cox(&d, Ties::Breslow).unwrap();
        let res = ph_test(&d, &fit, &[], TimeTransform::Identity).unwrap();

        // Score and information of (beta, gamma) at (beta_hat, 0) by central differences.
        let g = |t: f64| t;
        let f = |b: f64, c: f64| extended_loglik(&time, &status, &x, &g, b, c);
        let (b0, h) = (fit.coef[0], 1e-4);
        let ug = (f(b0, h) - f(b0, -h)) / (2.0 * h);
        let ibb = -(f(b0 + h, 0.0) - 2.0 * f(b0, 0.0) + f(b0 - h, 0.0)) / (h * h);
        let igg = -(f(b0, h) - 2.0 * f(b0, 0.0) + f(b0, -h)) / (h * h);
        let ibg = -(f(b0 + h, h) - f(b0 + h, -h) - f(b0 - h, h) + f(b0 - h, -h)) / (4.0 * h * h);
        let expected = ug * ug / (igg - ibg * ibg / ibb);
        let got = res.rows[0].chi_squared;
        assert!(
            (got - expected).abs() < 1e-4 * expected.max(1.0),
            "{got} vs {expected}"
        );
        assert_eq!(res.global().df, 1);
        assert!((res.global().chi_squared - got).abs() < 1e-12);
    }

    #[test]
    fn too_few_events() {
        let d = CoxData::right_censored(
            vec![1.0, 2.0, 3.0],
            vec![true, false, false],
            DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.5]),
            vec!["x".into()],
        )
        .unwrap();
        let fit = fit_cox(&d, Ties::Efron).unwrap();
        assert!(matches!(
            ph_test(&d, &fit, &[], TimeTransform::Km),
            Err(Error::TooFewEvents { .. })
        ));
    }
}
