//! Parametric accelerated failure time models in location-scale form:
//! `g(T) = x'beta + sigma * W`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::cox::CoefRow;
use super::design::Design;
use crate::data::ValidatedSurvivalData;
use crate::error::{Error, Result};
use crate::stats::two_sided_p;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Exponential,
    Weibull,
    Gaussian,
    Logistic,
    Lognormal,
    Loglogistic,
}

impl Distribution {
    pub const ALL: [Distribution; 6] = [
        Distribution::Exponential,
        Distribution::Weibull,
        Distribution::Gaussian,
        Distribution::Logistic,
        Distribution::Lognormal,
        Distribution::Loglogistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Distribution::Exponential => "exponential",
            Distribution::Weibull => "weibull",
            Distribution::Gaussian => "gaussian",
            Distribution::Logistic => "logistic",
            Distribution::Lognormal => "lognormal",
            Distribution::Loglogistic => "loglogistic",
        }
    }

    /// Whether the model is on log time.
    pub fn is_log(self) -> bool {
        !matches!(self, Distribution::Gaussian | Distribution::Logistic)
    }

    fn error(self) -> ErrorDist {
        match self {
            Distribution::Exponential | Distribution::Weibull => ErrorDist::ExtremeValue,
            Distribution::Logistic | Distribution::Loglogistic => ErrorDist::Logistic,
            Distribution::Gaussian | Distribution::Lognormal => ErrorDist::Normal,
        }
    }
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Distribution::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown distribution `{s}`")))
    }
}

#[derive(Debug, Clone, Copy)]
enum ErrorDist {
    ExtremeValue,
    Logistic,
    Normal,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

impl ErrorDist {
    /// `(log f, d/dw, d2/dw2)` of the standard density.
    fn log_density(self, w: f64) -> (f64, f64, f64) {
        match self {
            ErrorDist::ExtremeValue => {
                let e = w.exp();
                (w - e, 1.0 - e, -e)
            }
            ErrorDist::Logistic => {
                let f = logistic(w);
                (w - 2.0 * softplus(w), 1.0 - 2.0 * f, -2.0 * f * (1.0 - f))
            }
            ErrorDist::Normal => (-0.5 * w * w - LN_SQRT_2PI, -w, -1.0),
        }
    }

    /// `(log S, d/dw, d2/dw2)` of the standard survivor function.
    fn log_survival(self, w: f64) -> (f64, f64, f64) {
        match self {
            ErrorDist::ExtremeValue => {
                let e = w.exp();
                (-e, -e, -e)
            }
            ErrorDist::Logistic => {
                let f = logistic(w);
                (-softplus(w), -f, -f * (1.0 - f))
            }
            ErrorDist::Normal => {
                let tail = 0.5 * erfc(w / std::f64::consts::SQRT_2);
                let (log_s, h) = if tail > 1e-300 {
                    (tail.ln(), (-0.5 * w * w - LN_SQRT_2PI).exp() / tail)
                } else {
                    // Asymptotic Mills ratio far in the upper tail.
                    let h = w + 1.0 / w;
                    (-0.5 * w * w - LN_SQRT_2PI - h.ln(), h)
                };
                (log_s, -h, -h * (h - w))
            }
        }
    }
}

fn logistic(w: f64) -> f64 {
    if w >= 0.0 {
        1.0 / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

fn softplus(w: f64) -> f64 {
    if w > 0.0 {
        w + (-w).exp().ln_1p()
    } else {
        w.exp().ln_1p()
    }
}

/// Outcome and design (intercept included) for AFT fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct AftData {
    pub time: Vec<f64>,
    pub status: Vec<bool>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

impl AftData {
    /// Prepends an intercept column to `x`.
    pub fn new(time: Vec<f64>, status: Vec<bool>, x: &DMatrix<f64>, names: &[String]) -> AftData {
        let n = time.len();
        let x = DMatrix::from_fn(
            n,
            x.ncols() + 1,
            |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] },
        );
        let mut all = vec!["(Intercept)".to_string()];
        all.extend(names.iter().cloned());
        AftData {
            time,
            status,
            x,
            names: all,
        }
    }

    pub fn intercept_only(time: Vec<f64>, status: Vec<bool>) -> AftData {
        let n = time.len();
        AftData::new(time, status, &DMatrix::zeros(n, 0), &[])
    }
}

/// Log-likelihood, gradient and Hessian in `(beta, log sigma)`.
#[derive(Debug, Clone)]
pub struct AftLikelihood {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Evaluates the censored log-likelihood at `theta = (beta, log sigma)`.
pub fn aft_likelihood(data: &AftData, dist: Distribution, theta: &[f64]) -> AftLikelihood {
    let p = data.x.ncols();
    let err = dist.error();
    let tau = theta[p];
    let sigma = tau.exp();
    let beta = DVector::from_column_slice(&theta[..p]);
    let mut loglik = 0.0;
    let mut gradient = DVector::zeros(p + 1);
    let mut hessian = DMatrix::zeros(p + 1, p + 1);
    for i in 0..data.time.len() {
        let t = data.time[i];
        let y = if dist.is_log() { t.ln() } else { t };
        let xi = data.x.row(i);
        let z = (y - xi.dot(&beta.transpose())) / sigma;
        let event = data.status[i];
        let (l, lz, lzz) = if event {
            err.log_density(z)
        } else {
            err.log_survival(z)
        };
        if event {
            loglik += l - tau - if dist.is_log() { y } else { 0.0 };
        } else {
            loglik += l;
        }
        let g_mu = -lz / sigma;
        let g_tau = -z * lz - if event { 1.0 } else { 0.0 };
        let h_mumu = lzz / (sigma * sigma);
        let h_mutau = (z * lzz + lz) / sigma;
        let h_tautau = z * lz + z * z * lzz;
        for a in 0..p {
            gradient[a] += g_mu * xi[a];
            for b in 0..p {
                hessian[(a, b)] += h_mumu * xi[a] * xi[b];
            }
            hessian[(a, p)] += h_mutau * xi[a];
            hessian[(p, a)] += h_mutau * xi[a];
        }
        gradient[p] += g_tau;
        hessian[(p, p)] += h_tautau;
    }
    AftLikelihood {
        loglik,
        gradient,
        hessian,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AftFit {
    pub distribution: Distribution,
    pub coefficients: Vec<CoefRow>,
    #[serde(skip)]
    pub coef: Vec<f64>,
    pub log_scale: f64,
    pub scale: f64,
    /// Standard error of `log_scale`; absent when the scale is fixed.
    pub log_scale_se: Option<f64>,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub n: usize,
    pub n_events: usize,
    pub converged: bool,
    pub iterations: usize,
}

const MAX_ITER: usize = 50;
const REL_TOL: f64 = 1e-9;

/// Fits `dist`; the exponential model fixes the scale at 1.
pub fn fit_aft_data(data: &AftData, dist: Distribution) -> Result<AftFit> {
    let fixed = matches!(dist, Distribution::Exponential).then_some(0.0);
    fit_aft_fixed(data, dist, fixed)
}

/// Fits `dist` with `log sigma` optionally held at a fixed value.
pub fn fit_aft_fixed(
    data: &AftData,
    dist: Distribution,
    fixed_log_scale: Option<f64>,
) -> Result<AftFit> {
    let n = data.time.len();
    let n_events = data.status.iter().filter(|&&s| s).count();
    if n_events == 0 {
        return Err(Error::NoEvents);
    }
    if dist.is_log() {
        if let Some(i) = data.time.iter().position(|&t| !(t > 0.0)) {
            return Err(Error::NonPositiveTime { row: i + 1 });
        }
    }
    let p = data.x.ncols();
    let y: Vec<f64> = data
        .time
        .iter()
        .map(|&t| if dist.is_log() { t.ln() } else { t })
        .collect();

    // Least-squares start, treating censored values as observed.
    let yv = DVector::from_vec(y.clone());
    let xtx = data.x.transpose() * &data.x;
    let beta0 = xtx
        .clone()
        .cholesky()
        .map(|c| c.solve(&(data.x.transpose() * &yv)))
        .ok_or(Error::SingularInformation)?;
    let resid = &yv - &data.x * &beta0;
    let rss = resid.norm_squared() / n.max(1) as f64;
    let tau0 = fixed_log_scale.unwrap_or(if rss > 0.0 { 0.5 * rss.ln() } else { 0.0 });
    let free = if fixed_log_scale.is_some() { p } else { p + 1 };

    let mut theta: Vec<f64> = beta0.iter().copied().chain(std::iter::once(tau0)).collect();
    let mut cur = aft_likelihood(data, dist, &theta);
    if !cur.loglik.is_finite() {
        // Fall back to a unit-scale start.
        theta[p] = fixed_log_scale.unwrap_or(0.0);
        cur = aft_likelihood(data, dist, &theta);
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let g = cur.gradient.rows(0, free).into_owned();
        let neg_h = -cur.hessian.view((0, 0), (free, free)).into_owned();
        let mut lambda = 0.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut m = neg_h.clone();
            for d in 0..free {
                m[(d, d)] += lambda * (1.0 + neg_h[(d, d)].abs());
            }
            if let Some(ch) = m.cholesky() {
                let mut step = ch.solve(&g);
                for _ in 0..30 {
                    let mut cand = theta.clone();
                    for d in 0..free {
                        cand[d] += step[d];
                    }
                    let next = aft_likelihood(data, dist, &cand);
                    if next.loglik.is_finite()
                        && next.loglik >= cur.loglik - 1e-12 * cur.loglik.abs()
                    {
                        accepted = Some((cand, next));
                        break;
                    }
                    step /= 2.0;
                }
                if accepted.is_some() {
                    break;
                }
            }
            lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
        }
        let Some((cand, next)) = accepted else {
            return Err(Error::Diverged(format!(
                "{} fit made no progress",
                dist.name()
            )));
        };
        let change = (next.loglik - cur.loglik).abs() / cur.loglik.abs().max(1e-300);
        theta = cand;
        cur = next;
        if change < REL_TOL && cur.gradient.rows(0, free).amax() < 1e-4 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Diverged(format!(
            "{} fit did not converge in {MAX_ITER} iterations",
            dist.name()
        )));
    }

    let info = -cur.hessian.view((0, 0), (free, free)).into_owned();
    let cov = info.try_inverse().ok_or(Error::SingularInformation)?;
    let coefficients = (0..p)
        .map(|j| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = theta[j] / se;
            CoefRow {
                term: data.names[j].clone(),
                coef: theta[j],
                exp_coef: theta[j].exp(),
                se,
                z,
                p: two_sided_p(z),
            }
        })
        .collect();
    Ok(AftFit {
        distribution: dist,
        coefficients,
        coef: theta[..p].to_vec(),
        log_scale: theta[p],
        scale: theta[p].exp(),
        log_scale_se: (free > p).then(|| cov[(p, p)].max(0.0).sqrt()),
        loglik: cur.loglik,
        n_params: free,
        aic: -2.0 * cur.loglik + 2.0 * free as f64,
        n,
        n_events,
        converged,
        iterations,
    })
}

/// Fits `dist` on the complete cases of `covariates`.
pub fn fit_aft(
    data: &ValidatedSurvivalData,
    covariates: &[String],
    dist: Distribution,
) -> Result<AftFit> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let design = Design::build(&data.covariates, covariates, &rows)?;
    let aft = AftData::new(
        design.rows.iter().map(|&r| data.time[r]).collect(),
        design.rows.iter().map(|&r| data.status[r]).collect(),
        &design.x,
        &design.names,
    );
    fit_aft_data(&aft, dist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_closed_form() {
        let t = vec![0.5, 1.2, 2.0, 3.1, 0.7];
        let d = AftData::intercept_only(t.clone(), vec![true; 5]);
        let fit = fit_aft_data(&d, Distribution::Exponential).unwrap();
        let mean = t.iter().sum::<f64>() / 5.0;
        assert!((fit.coef[0] - mean.ln()).abs() < 1e-10);
        let rate = 1.0 / mean;
        let ll: f64 = t.iter().map(|&x| rate.ln() - rate * x).sum();
        assert!((fit.loglik - ll).abs() < 1e-10);
        assert_eq!(fit.n_params, 1);
        assert_eq!(fit.scale, 1.0);
    }

    #[test]
    fn weibull_matches_grid_refinement() {
        let t = vec![1.0, 2.0, 2.5, 4.0, 5.0, 7.5];
        let s = vec![true, true, false, true, true, false];
        let d = AftData::intercept_only(t.clone(), s.clone());
        let fit = fit_aft_data(&d, Distribution::Weibull).unwrap();
        // Direct Weibull log-likelihood in (log scale parameter, log shape).
        let ll = |mu: f64, tau: f64| -> f64 {
            let sigma = tau.exp();
            t.iter()
                .zip(&s)
                .map(|(&ti, &e)| {
                    let z = (ti.ln() - mu) / sigma;
                    if e {
                        z - z.exp() - tau - ti.ln()
                    } else {
                        -z.exp()
                    }
                })
                .sum()
        };
        let (mut c_mu, mut c_tau, mut width) = (1.0, 0.0, 4.0);
        for _ in 0..12 {
            let mut best = (f64::NEG_INFINITY, c_mu, c_tau);
            for a in 0..=40 {
                for b in 0..=40 {
                    let mu = c_mu - width + 2.0 * width * a as f64 / 40.0;
                    let tau = c_tau - width + 2.0 * width * b as f64 / 40.0;
                    let v = ll(mu, tau);
                    if v > best.0 {
                        best = (v, mu, tau);
                    }
                }
            }
            c_mu = best.1;
            c_tau = best.2;
            width /= 4.0;
        }
        assert!((fit.coef[0] - c_mu).abs() < 1e-3);
        assert!((fit.log_scale - c_tau).abs() < 1e-3);
        assert!((fit.loglik - ll(c_mu, c_tau)).abs() < 1e-6);
    }

    #[test]
    fn exponential_is_unit_scale_weibull() {
        let t = vec![1.0, 3.0, 2.2, 0.4, 5.0, 2.0, 6.1];
        let s = vec![true, false, true, true, false, true, true];
        let x = DMatrix::from_column_slice(7, 1, &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        let d = AftData::new(t, s, &x, &["g".into()]);
        let e = fit_aft_data(&d, Distribution::Exponential).unwrap();
        let w = fit_aft_fixed(&d, Distribution::Weibull, Some(0.0)).unwrap();
        assert!((e.loglik - w.loglik).abs() < 1e-8);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let t = vec![1.0, 3.0, 2.2, 0.4, 5.0, 2.0, 6.1, 8.0];
        let s = vec![true, false, true, true, false, true, true, false];
        let x = DMatrix::from_column_slice(8, 1, &[0.5, 1.0, -0.2, 1.3, 0.1, 0.0, 2.0, -1.0]);
        let d = AftData::new(t, s, &x, &["x".into()]);
        let h = 1e-6;
        for dist in Distribution::ALL {
            for theta in [[0.5, 0.2, -0.3], [1.0, -0.4, 0.1], [0.0, 0.0, 0.0]] {
                let an = aft_likelihood(&d, dist, &theta);
                for k in 0..3 {
                    let mut a = theta;
                    let mut b = theta;
                    a[k] += h;
                    b[k] -= h;
                    let fd = (aft_likelihood(&d, dist, &a).loglik
                        - aft_likelihood(&d, dist, &b).loglik)
                        / (2.0 * h);
                    let g = an.gradient[k];
                    assert!(
                        (fd - g).abs() <= 1e-5 * g.abs().max(1.0),
                        "{dist:?} {k}: {fd} vs {g}"
                    );
                    for m in 0..3 {
                        let ga = aft_likelihood(&d, dist, &a).gradient[m];
                        let gb = aft_likelihood(&d, dist, &b).gradient[m];
                        let fh = (ga - gb) / (2.0 * h);
                        assert!(
                            (fh - an.hessian[(k, m)]).abs()
                                <= 1e-4 * an.hessian[(k, m)].abs().max(1.0)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_non_positive_time_for_log_families() {
        let d = AftData::intercept_only(vec![1.0, 0.0], vec![true, true]);
        assert_eq!(
            fit_aft_data(&d, Distribution::Weibull).unwrap_err(),
            Error::NonPositiveTime { row: 2 }
        );
        assert!(fit_aft_data(&d, Distribution::Gaussian).is_ok());
    }
}
