//! Sequential likelihood-ratio tables and the spline nonlinearity test.

use nalgebra::DMatrix;
use serde::Serialize;

use super::cox::{fit_cox, CoxData, SurvFrame, Ties};
use super::spline::{knots, rcs_basis, KNOT_QUANTILES};
use crate::error::{Error, Result};
use crate::stats::{chi2_sf, unique_sorted};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaRow {
    pub term: String,
    pub loglik: f64,
    pub chi_squared: f64,
    pub df: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaTable {
    pub loglik_null: f64,
    pub rows: Vec<AnovaRow>,
    pub n: usize,
    pub n_events: usize,
}

/// Nested Cox fits adding one term at a time, all on the complete cases of
/// the full model.
pub fn anova_sequential(
    frame: &SurvFrame,
    terms: &[String],
    ties: Ties,
    candidates: Option<&[usize]>,
) -> Result<AnovaTable> {
    if terms.is_empty() {
        return Err(Error::InvalidParameter(
            "ANOVA needs at least one term".into(),
        ));
    }
    let (full, design) = frame.cox_data(terms, candidates)?;
    let rows = design.rows.clone();
    let mut prev_ll = None;
    let mut prev_cols = 0;
    let mut out = Vec::with_capacity(terms.len());
    let mut loglik_null = 0.0;
    for k in 0..terms.len() {
        let (data, _) = frame.cox_data(&terms[..=k], Some(&rows))?;
        let fit = fit_cox(&data, ties)?;
        let before = *prev_ll.get_or_insert(fit.loglik_null);
        if k == 0 {
            loglik_null = before;
        }
        let df = data.p() - prev_cols;
        let chi = 2.0 * (fit.loglik_final - before);
        out.push(AnovaRow {
            term: terms[k].clone(),
            loglik: fit.loglik_final,
            chi_squared: chi,
            df,
            p: chi2_sf(chi, df),
        });
        prev_ll = Some(fit.loglik_final);
        prev_cols = data.p();
    }
    Ok(AnovaTable {
        loglik_null,
        rows: out,
        n: full.n(),
        n_events: full.n_events(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonlinearityResult {
    pub covariate: String,
    pub knots: Vec<f64>,
    pub loglik_linear: f64,
    pub loglik_spline: f64,
    pub chi_squared: f64,
    pub df: usize,
    pub p: f64,
}

/// LR test of a linear effect against a restricted cubic spline with knots at
/// the 5/35/65/95% quantiles, adjusting for `adjust` terms.
pub fn nonlinearity_test(
    frame: &SurvFrame,
    covariate: &str,
    adjust: &[String],
    ties: Ties,
    candidates: Option<&[usize]>,
) -> Result<NonlinearityResult> {
    let col = frame.covariates.get(covariate)?;
    if !col.is_numeric() {
        return Err(Error::TooFewDistinctValues {
            column: covariate.to_string(),
            distinct: 0,
            required: 5,
        });
    }
    let mut terms = vec![covariate.to_string()];
    terms.extend(adjust.iter().filter(|a| a.as_str() != covariate).cloned());
    let (linear, _) = frame.cox_data(&terms, candidates)?;
    let xs: Vec<f64> = linear.x.column(0).iter().copied().collect();
    let distinct = unique_sorted(xs.iter().copied()).len();
    if distinct < 5 {
        return Err(Error::TooFewDistinctValues {
            column: covariate.to_string(),
            distinct,
            required: 5,
        });
    }
    let kn = knots(&xs, &KNOT_QUANTILES);
    if kn.len() < 3 {
        return Err(Error::TooFewDistinctValues {
            column: covariate.to_string(),
            distinct: kn.len(),
            required: 3,
        });
    }
    let extra = kn.len() - 2;
    let p = linear.p();
    let basis: Vec<Vec<f64>> = xs.iter().map(|&x| rcs_basis(x, &kn)).collect();
    let x = DMatrix::from_fn(linear.n(), p + extra, |i, j| {
        if j < p {
            linear.x[(i, j)]
        } else {
            basis[i][j - p]
        }
    });
    let mut names = linear.names.clone();
    names.extend((1..=extra).map(|j| format!("{covariate}'{}", "'".repeat(j - 1))));
    let spline = CoxData::new(
        linear.start.clone(),
        linear.stop.clone(),
        linear.status.clone(),
        x,
        names,
    )?;
    let fit_linear = fit_cox(&linear, ties)?;
    let fit_spline = fit_cox(&spline, ties)?;
    let chi = 2.0 * (fit_spline.loglik_final - fit_linear.loglik_final);
    Ok(NonlinearityResult {
        covariate: covariate.to_string(),
        knots: kn,
        loglik_linear: fit_linear.loglik_final,
        loglik_spline: fit_spline.loglik_final,
        chi_squared: chi,
        df: extra,
        p: chi2_sf(chi, extra),
    })
}
