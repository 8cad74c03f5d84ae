//! Cox proportional hazards regression over `(start, stop]` risk sets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::Design;
use crate::data::{CovariateTable, ValidatedSurvivalData};
use crate::error::{Error, Result};
use crate::stats::{chi2_sf, two_sided_p};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Ties {
    #[default]
    Efron,
    Breslow,
}

impl std::str::FromStr for Ties {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "efron" => Ok(Ties::Efron),
            "breslow" => Ok(Ties::Breslow),
            other => Err(Error::InvalidParameter(format!(
                "unknown ties method `{other}`"
            ))),
        }
    }
}

/// Counting-process survival data with a design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxData {
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
    pub status: Vec<bool>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

impl CoxData {
    pub fn new(
        start: Vec<f64>,
        stop: Vec<f64>,
        status: Vec<bool>,
        x: DMatrix<f64>,
        names: Vec<String>,
    ) -> Result<CoxData> {
        let n = stop.len();
        if start.len() != n || status.len() != n || x.nrows() != n || names.len() != x.ncols() {
            return Err(Error::InvalidParameter(
                "Cox inputs differ in length".into(),
            ));
        }
        if (0..n).any(|i| start[i] > stop[i]) {
            return Err(Error::InvalidParameter("start time after stop time".into()));
        }
        Ok(CoxData {
            start,
            stop,
            status,
            x,
            names,
        })
    }

    /// Right-censored data (all entries at time 0).
    pub fn right_censored(
        time: Vec<f64>,
        status: Vec<bool>,
        x: DMatrix<f64>,
        names: Vec<String>,
    ) -> Result<CoxData> {
        let start = vec![f64::NEG_INFINITY; time.len()];
        Self::new(start, time, status, x, names)
    }

    pub fn n(&self) -> usize {
        self.stop.len()
    }

    pub fn n_events(&self) -> usize {
        self.status.iter().filter(|&&s| s).count()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    fn column_means(&self) -> DVector<f64> {
        let n = self.n().max(1) as f64;
        DVector::from_fn(self.p(), |j, _| self.x.column(j).sum() / n)
    }
}

/// Counting-process outcome with its covariate table, before design coding.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvFrame {
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
    pub status: Vec<bool>,
    pub covariates: CovariateTable,
}

impl SurvFrame {
    pub fn len(&self) -> usize {
        self.stop.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stop.is_empty()
    }

    /// Design and Cox data over the complete cases of `terms` among `candidates`
    /// (all rows when `None`).
    pub fn cox_data(
        &self,
        terms: &[String],
        candidates: Option<&[usize]>,
    ) -> Result<(CoxData, Design)> {
        let all: Vec<usize>;
        let candidates = match candidates {
            Some(c) => c,
            None => {
                all = (0..self.len()).collect();
                &all
            }
        };
        let design = Design::build(&self.covariates, terms, candidates)?;
        let pick = |v: &[f64]| design.rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        let data = CoxData::new(
            pick(&self.start),
            pick(&self.stop),
            design.rows.iter().map(|&r| self.status[r]).collect(),
            design.x.clone(),
            design.names.clone(),
        )?;
        Ok((data, design))
    }
}

impl From<&ValidatedSurvivalData> for SurvFrame {
    fn from(d: &ValidatedSurvivalData) -> SurvFrame {
        SurvFrame {
            start: vec![f64::NEG_INFINITY; d.time.len()],
            stop: d.time.clone(),
            status: d.status.clone(),
            covariates: d.covariates.clone(),
        }
    }
}

/// Term groups of a design, as used by the PH test.
pub fn term_groups(design: &Design) -> Vec<(String, Vec<usize>)> {
    design
        .terms
        .iter()
        .enumerate()
        .map(|(k, t)| (t.clone(), design.term_columns(k)))
        .collect()
}

/// Risk-set sums at one distinct event time.
pub(crate) struct EventTime<'a> {
    pub time: f64,
    pub deaths: &'a [usize],
    pub n_risk: usize,
    pub s0: f64,
    pub s1: &'a DVector<f64>,
    pub s2: &'a DMatrix<f64>,
    pub s0d: f64,
    pub s1d: &'a DVector<f64>,
    pub s2d: &'a DMatrix<f64>,
}

/// Sorted views for sweeping risk sets from the last event time backwards.
pub(crate) struct RiskSweep<'a> {
    data: &'a CoxData,
    by_stop: Vec<usize>,
    by_start: Vec<usize>,
    by_start_zero: Vec<usize>,
    event_times: Vec<(f64, Vec<usize>)>,
}

impl<'a> RiskSweep<'a> {
    pub fn new(data: &'a CoxData) -> RiskSweep<'a> {
        let n = data.n();
        let desc = |key: &dyn Fn(usize) -> f64, idx: &mut Vec<usize>| {
            idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)));
        };
        let mut by_stop: Vec<usize> = (0..n).collect();
        desc(&|i| data.stop[i], &mut by_stop);
        let (mut by_start_zero, mut by_start): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| data.start[i] == data.stop[i]);
        desc(&|i| data.start[i], &mut by_start);
        desc(&|i| data.start[i], &mut by_start_zero);
        let mut event_times: Vec<(f64, Vec<usize>)> = Vec::new();
        for &i in &by_stop {
            if !data.status[i] {
                continue;
            }
            match event_times.last_mut() {
                Some((t, d)) if *t == data.stop[i] => d.push(i),
                _ => event_times.push((data.stop[i], vec![i])),
            }
        }
        RiskSweep {
            data,
            by_stop,
            by_start,
            by_start_zero,
            event_times,
        }
    }

    /// Visits event times in decreasing order with risk-set sums of
    /// `w = exp(x'beta - offset)`, `w x` and `w x x'`.
    pub fn visit(&self, eta: &[f64], mut f: impl FnMut(EventTime<'_>)) {
        let p = self.data.p();
        let x = &self.data.x;
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        let mut n_risk: isize = 0;
        let (mut a, mut b, mut c) = (0, 0, 0);
        let mut s1d = DVector::zeros(p);
        let mut s2d = DMatrix::zeros(p, p);
        let accumulate =
            |i: usize, sign: f64, s0: &mut f64, s1: &mut DVector<f64>, s2: &mut DMatrix<f64>| {
                let w = sign * eta[i].exp();
                *s0 += w;
                let xi = x.row(i);
                for j in 0..p {
                    s1[j] += w * xi[j];
                    for k in 0..=j {
                        s2[(j, k)] += w * xi[j] * xi[k];
                    }
                }
            };
        for (t, deaths) in &self.event_times {
            let t = *t;
            while a < self.by_stop.len() && self.data.stop[self.by_stop[a]] >= t {
                accumulate(self.by_stop[a], 1.0, &mut s0, &mut s1, &mut s2);
                n_risk += 1;
                a += 1;
            }
            while b < self.by_start.len() && self.data.start[self.by_start[b]] >= t {
                accumulate(self.by_start[b], -1.0, &mut s0, &mut s1, &mut s2);
                n_risk -= 1;
                b += 1;
            }
            while c < self.by_start_zero.len() && self.data.start[self.by_start_zero[c]] > t {
                accumulate(self.by_start_zero[c], -1.0, &mut s0, &mut s1, &mut s2);
                n_risk -= 1;
                c += 1;
            }
            let mut s0d = 0.0;
            s1d.fill(0.0);
            s2d.fill(0.0);
            for &i in deaths {
                accumulate(i, 1.0, &mut s0d, &mut s1d, &mut s2d);
            }
            symmetrize(&mut s2);
            symmetrize(&mut s2d);
            f(EventTime {
                time: t,
                deaths,
                n_risk: n_risk.max(0) as usize,
                s0,
                s1: &s1,
                s2: &s2,
                s0d,
                s1d: &s1d,
                s2d: &s2d,
            });
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for j in 0..p {
        for k in 0..j {
            m[(k, j)] = m[(j, k)];
        }
    }
}

/// Tie-corrected partial quantities of one event time: the sum over the
/// `d` tied deaths of the risk-set means and covariances, and the
/// log-denominator sum.
pub(crate) fn tied_moments(e: &EventTime<'_>, ties: Ties) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = e.deaths.len();
    let p = e.s1.len();
    let mut log_denom = 0.0;
    let mut mean_sum = DVector::zeros(p);
    let mut var_sum = DMatrix::zeros(p, p);
    for r in 0..d {
        let frac = match ties {
            Ties::Efron => r as f64 / d as f64,
            Ties::Breslow => 0.0,
        };
        let denom = e.s0 - frac * e.s0d;
        let mean = (e.s1 - e.s1d * frac) / denom;
        log_denom += denom.ln();
        var_sum += (e.s2 - e.s2d * frac) / denom - &mean * mean.transpose();
        mean_sum += mean;
    }
    (log_denom, mean_sum, var_sum)
}

/// Log partial likelihood, score and observed information.
pub struct PartialLikelihood {
    pub loglik: f64,
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
}

fn evaluate(
    sweep: &RiskSweep<'_>,
    data: &CoxData,
    centre: &DVector<f64>,
    beta: &DVector<f64>,
    ties: Ties,
) -> PartialLikelihood {
    let p = data.p();
    let eta: Vec<f64> = (0..data.n())
        .map(|i| (data.x.row(i).transpose() - centre).dot(beta))
        .collect();
    let mut loglik = 0.0;
    let mut score = DVector::zeros(p);
    let mut information = DMatrix::zeros(p, p);
    sweep.visit(&eta, |e| {
        let (log_denom, mean_sum, var_sum) = tied_moments(&e, ties);
        for &i in e.deaths {
            loglik += eta[i];
            score += data.x.row(i).transpose() - centre;
        }
        loglik -= log_denom;
        score -= mean_sum - centre * e.deaths.len() as f64;
        information += var_sum;
    });
    PartialLikelihood {
        loglik,
        score,
        information,
    }
}

/// Log partial likelihood and its derivatives at `beta`.
pub fn partial_likelihood(data: &CoxData, beta: &[f64], ties: Ties) -> PartialLikelihood {
    let sweep = RiskSweep::new(data);
    let centre = data.column_means();
    evaluate(
        &sweep,
        data,
        &centre,
        &DVector::from_column_slice(beta),
        ties,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefRow {
    pub term: String,
    pub coef: f64,
    pub exp_coef: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestRow {
    pub test: String,
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
}

/// Fitted Cox model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub coefficients: Vec<CoefRow>,
    #[serde(skip)]
    pub coef: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub loglik_null: f64,
    pub loglik_final: f64,
    pub tests: Vec<TestRow>,
    pub ties: Ties,
    pub n: usize,
    pub n_events: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Coefficients flagged as drifting to infinity (monotone likelihood).
    pub infinite: Vec<String>,
    #[serde(skip)]
    pub means: Vec<f64>,
}

impl CoxFit {
    pub fn hr(&self) -> Vec<f64> {
        self.coef.iter().map(|b| b.exp()).collect()
    }

    pub fn test(&self, name: &str) -> &TestRow {
        self.tests
            .iter()
            .find(|t| t.test == name)
            .expect("known test name")
    }
}

const MAX_ITER: usize = 25;
const REL_TOL: f64 = 1e-9;
const INFINITE_COEF: f64 = 15.0;

fn solve(information: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    information.clone().cholesky().map(|c| c.solve(rhs))
}

/// Newton-Raphson with step halving from `beta = 0`.
pub fn fit_cox(data: &CoxData, ties: Ties) -> Result<CoxFit> {
    let n_events = data.n_events();
    if n_events == 0 {
        return Err(Error::NoEvents);
    }
    let p = data.p();
    let sweep = RiskSweep::new(data);
    let centre = data.column_means();
    let mut beta = DVector::zeros(p);
    let mut cur = evaluate(&sweep, data, &centre, &beta, ties);
    let loglik_null = cur.loglik;
    if p == 0 {
        return Ok(CoxFit {
            coefficients: vec![],
            coef: vec![],
            cov: vec![],
            loglik_null,
            loglik_final: loglik_null,
            tests: vec![],
            ties,
            n: data.n(),
            n_events,
            converged: true,
            iterations: 0,
            infinite: vec![],
            means: vec![],
        });
    }
    let score_stat = match solve(&cur.information, &cur.score) {
        Some(step) => cur.score.dot(&step),
        None => return Err(Error::SingularInformation),
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut polish = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let Some(mut step) = solve(&cur.information, &cur.score) else {
            return Err(Error::SingularInformation);
        };
        let mut next = evaluate(&sweep, data, &centre, &(&beta + &step), ties);
        let mut halvings = 0;
        while !(next.loglik.is_finite() && next.loglik >= cur.loglik - 1e-12 * cur.loglik.abs())
            && halvings < 30
        {
            step /= 2.0;
            next = evaluate(&sweep, data, &centre, &(&beta + &step), ties);
            halvings += 1;
        }
        if !next.loglik.is_finite() {
            return Err(Error::Diverged("partial likelihood is not finite".into()));
        }
        let change = (next.loglik - cur.loglik).abs() / cur.loglik.abs().max(1e-300);
        beta += step;
        cur = next;
        if change < REL_TOL {
            // A couple of extra Newton steps drive the score to round-off.
            converged = true;
            polish += 1;
            if polish > 2 || cur.score.amax() < 1e-10 {
                break;
            }
        }
    }

    let cov = cur
        .information
        .clone()
        .try_inverse()
        .ok_or(Error::SingularInformation)?;
    let mut coefficients = Vec::with_capacity(p);
    let mut infinite = Vec::new();
    for j in 0..p {
        let se = cov[(j, j)].max(0.0).sqrt();
        let z = beta[j] / se;
        coefficients.push(CoefRow {
            term: data.names[j].clone(),
            coef: beta[j],
            exp_coef: beta[j].exp(),
            se,
            z,
            p: two_sided_p(z),
        });
        let col = data.x.column(j);
        let m = col.mean();
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / data.n() as f64).sqrt();
        if (beta[j] * sd).abs() > INFINITE_COEF {
            infinite.push(data.names[j].clone());
        }
    }
    let lr = 2.0 * (cur.loglik - loglik_null);
    let wald = beta.dot(&(&cur.information * &beta));
    let tests = [
        ("likelihood_ratio", lr),
        ("wald", wald),
        ("score", score_stat),
    ]
    .into_iter()
    .map(|(name, stat)| TestRow {
        test: name.to_string(),
        statistic: stat,
        df: p,
        p: chi2_sf(stat, p),
    })
    .collect();
    Ok(CoxFit {
        coefficients,
        coef: beta.iter().copied().collect(),
        cov: (0..p)
            .map(|i| (0..p).map(|j| cov[(i, j)]).collect())
            .collect(),
        loglik_null,
        loglik_final: cur.loglik,
        tests,
        ties,
        n: data.n(),
        n_events,
        converged,
        iterations,
        infinite,
        means: centre.iter().copied().collect(),
    })
}

/// Breslow increments of the cumulative hazard for a covariate profile:
/// `d(u) * exp(profile'beta) / sum_{risk} exp(x'beta)` at each event time, ascending.
pub fn breslow_increments(data: &CoxData, beta: &[f64], profile: &[f64]) -> Vec<(f64, f64)> {
    let sweep = RiskSweep::new(data);
    let centre = data.column_means();
    let beta = DVector::from_column_slice(beta);
    let eta: Vec<f64> = (0..data.n())
        .map(|i| (data.x.row(i).transpose() - &centre).dot(&beta))
        .collect();
    let rel = (DVector::from_column_slice(profile) - &centre)
        .dot(&beta)
        .exp();
    let mut out = Vec::new();
    sweep.visit(&eta, |e| {
        out.push((e.time, e.deaths.len() as f64 * rel / e.s0))
    });
    out.reverse();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_covariate(time: &[f64], status: &[bool], x: &[f64]) -> CoxData {
        CoxData::right_censored(
            time.to_vec(),
            status.to_vec(),
            DMatrix::from_column_slice(x.len(), 1, x),
            vec!["x".into()],
        )
        .unwrap()
    }

    /// Log partial likelihood written out for untied right-censored data.
    fn naive_loglik(time: &[f64], status: &[bool], x: &[f64], b: f64) -> f64 {
        let mut ll = 0.0;
        for i in 0..time.len() {
            if status[i] {
                let denom: f64 = (0..time.len())
                    .filter(|&k| time[k] >= time[i])
                    .map(|k| (b * x[k]).exp())
                    .sum();
                ll += b * x[i] - denom.ln();
            }
        }
        ll
    }

    #[test]
    fn matches_grid_search_on_four_subjects() {
        let time = [1.0, 2.0, 3.0, 4.0];
        let status = [true, true, false, true];
        let x = [2.0, 0.0, 1.0, 1.5];
        // Grid search with successive refinement over [-10, 10].
        let (mut lo, mut hi) = (-10.0, 10.0);
        let mut best = 0.0;
        for _ in 0..8 {
            let step = (hi - lo) / 400.0;
            let mut best_ll = f64::NEG_INFINITY;
            for k in 0..=400 {
                let b = lo + k as f64 * step;
                let ll = naive_loglik(&time, &status, &x, b);
                if ll > best_ll {
                    best_ll = ll;
                    best = b;
                }
            }
            lo = best - 2.0 * step;
            hi = best + 2.0 * step;
        }
        let fit = fit_cox(&one_covariate(&time, &status, &x), Ties::Efron).unwrap();
        assert!(
            (fit.coef[0] - best).abs() < 1e-4,
            "{} vs {}",
            fit.coef[0],
            best
        );
        assert!((fit.loglik_final - naive_loglik(&time, &status, &x, fit.coef[0])).abs() < 1e-10);
    }

    #[test]
    fn identical_groups_give_null_fit() {
        let time = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let status = [true, false, true, true, false, true];
        let x = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let fit = fit_cox(&one_covariate(&time, &status, &x), Ties::Efron).unwrap();
        assert!(fit.coef[0].abs() < 1e-12);
        for t in &fit.tests {
            assert!((t.p - 1.0).abs() < 1e-9, "{t:?}");
        }
    }

    #[test]
    fn breslow_equals_efron_without_ties() {
        let time = [1.0, 2.5, 3.0, 4.0, 5.5, 6.0];
        let status = [true, true, false, true, true, false];
        let x = [0.3, -1.0, 2.0, 0.0, 1.0, 0.5];
        let d = one_covariate(&time, &status, &x);
        let a = fit_cox(&d, Ties::Efron).unwrap();
        let b = fit_cox(&d, Ties::Breslow).unwrap();
        assert!((a.coef[0] - b.coef[0]).abs() < 1e-10);
        assert!((a.loglik_final - b.loglik_final).abs() < 1e-10);
    }

    #[test]
    fn efron_tie_correction_by_hand() {
        // Two tied deaths at t=1 among three subjects.
        let d = one_covariate(&[1.0, 1.0, 2.0], &[true, true, true], &[1.0, 0.0, 0.0]);
        let b = 0.7f64;
        let w = [b.exp(), 1.0, 1.0];
        let s0 = w[0] + w[1] + w[2];
        let s0d = w[0] + w[1];
        let efron = b - s0.ln() - (s0 - 0.5 * s0d).ln() - 0.0;
        let pl = partial_likelihood(&d, &[b], Ties::Efron);
        assert!((pl.loglik - efron).abs() < 1e-12);
        let breslow = b - 2.0 * s0.ln();
        let pl = partial_likelihood(&d, &[b], Ties::Breslow);
        assert!((pl.loglik - breslow).abs() < 1e-12);
    }

    #[test]
    fn counting_process_risk_sets() {
        // Subject 2 enters at 2.5, after the first event.
        let d = CoxData::new(
            vec![0.0, 2.5, 0.0],
            vec![2.0, 4.0, 3.0],
            vec![true, true, true],
            DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 2.0]),
            vec!["x".into()],
        )
        .unwrap();
        let b = 0.4f64;
        // t=2: risk {0, 2}; t=3: {1, 2}; t=4: {1}.
        let expected = b * 1.0 - ((b * 1.0).exp() + (b * 2.0).exp()).ln() + b * 2.0
            - (1.0 + (b * 2.0).exp()).ln()
            + 0.0
            - 1.0f64.ln();
        let pl = partial_likelihood(&d, &[b], Ties::Efron);
        assert!((pl.loglik - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_length_interval_is_at_risk_at_its_own_time() {
        let d = CoxData::new(
            vec![5.0, 0.0],
            vec![5.0, 8.0],
            vec![true, false],
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            vec!["x".into()],
        )
        .unwrap();
        let b = 0.3f64;
        let pl = partial_likelihood(&d, &[b], Ties::Efron);
        assert!((pl.loglik - (b - (b.exp() + 1.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_are_singular() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 0.0, 0.0, 1.0, 2.0, 3.0, 6.0]);
        let d = CoxData::right_censored(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true; 4],
            x,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        assert_eq!(fit_cox(&d, Ties::Efron), Err(Error::SingularInformation));
    }

    #[test]
    fn no_events() {
        let d = one_covariate(&[1.0, 2.0], &[false, false], &[0.0, 1.0]);
        assert_eq!(fit_cox(&d, Ties::Efron), Err(Error::NoEvents));
    }

    #[test]
    fn monotone_likelihood_is_flagged() {
        // Covariate perfectly orders the event times.
        let d = one_covariate(
            &[1.0, 2.0, 3.0, 4.0],
            &[true, true, true, true],
            &[3.0, 2.0, 1.0, 0.0],
        );
        let fit = fit_cox(&d, Ties::Efron).unwrap();
        assert_eq!(fit.infinite, vec!["x".to_string()]);
    }
}
