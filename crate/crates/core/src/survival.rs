//! Kaplan-Meier estimation with Greenwood errors, and k-sample G-rho rank tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ValidatedSurvivalData;
use crate::error::{Error, Result};
use crate::stats::{chi2_sf, normal_quantile, unique_sorted};

/// Transform used for pointwise confidence intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConfType {
    Plain,
    #[default]
    Log,
    LogLog,
}

impl std::str::FromStr for ConfType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(ConfType::Plain),
            "log" => Ok(ConfType::Log),
            "log-log" | "loglog" => Ok(ConfType::LogLog),
            other => Err(Error::InvalidParameter(format!(
                "unknown conf_type `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvPoint {
    pub time: f64,
    pub n_risk: usize,
    pub n_event: usize,
    pub surv: f64,
    /// Standard error of the survival estimate; missing once it reaches 0.
    pub se: Option<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// Survival estimate at each distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvCurve {
    pub group: Option<String>,
    pub n: usize,
    pub n_events: usize,
    pub points: Vec<SurvPoint>,
    pub flags: Vec<String>,
}

impl SurvCurve {
    /// Right-continuous evaluation.
    pub fn surv_at(&self, t: f64) -> f64 {
        self.points
            .iter()
            .take_while(|p| p.time <= t)
            .last()
            .map_or(1.0, |p| p.surv)
    }
}

/// Product-limit estimate with optional case weights and fractional events.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ProductLimit {
    pub times: Vec<f64>,
    pub n_risk: Vec<f64>,
    pub n_event: Vec<f64>,
    pub surv: Vec<f64>,
}

impl ProductLimit {
    /// `event[i]` is the (possibly fractional) event mass of observation `i`;
    /// deaths precede censorings at equal times.
    pub fn fit(time: &[f64], event: &[f64], weight: Option<&[f64]>) -> ProductLimit {
        let mut order: Vec<usize> = (0..time.len()).collect();
        order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
        let w = |i: usize| weight.map_or(1.0, |w| w[i]);
        let mut at_risk: f64 = order.iter().map(|&i| w(i)).sum();
        let mut out = ProductLimit {
            times: Vec::new(),
            n_risk: Vec::new(),
            n_event: Vec::new(),
            surv: Vec::new(),
        };
        let mut s = 1.0;
        let mut k = 0;
        while k < order.len() {
            let t = time[order[k]];
            let mut d = 0.0;
            let mut leaving = 0.0;
            let mut m = k;
            while m < order.len() && time[order[m]] == t {
                d += w(order[m]) * event[order[m]];
                leaving += w(order[m]);
                m += 1;
            }
            if d > 0.0 {
                s *= 1.0 - d / at_risk;
                out.times.push(t);
                out.n_risk.push(at_risk);
                out.n_event.push(d);
                out.surv.push(s);
            }
            at_risk -= leaving;
            k = m;
        }
        out
    }

    /// Right-continuous value at `t`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.surv[k - 1]
        }
    }

    /// Left limit at `t`.
    pub fn before(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x < t);
        if k == 0 {
            1.0
        } else {
            self.surv[k - 1]
        }
    }
}

fn km_curve(
    time: &[f64],
    status: &[bool],
    group: Option<String>,
    conf_level: f64,
    conf_type: ConfType,
) -> SurvCurve {
    let z = normal_quantile(0.5 + conf_level / 2.0);
    let events: Vec<f64> = status.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    let pl = ProductLimit::fit(time, &events, None);
    let mut points = Vec::with_capacity(pl.times.len());
    let mut greenwood = 0.0;
    for k in 0..pl.times.len() {
        let (n, d, s) = (pl.n_risk[k], pl.n_event[k], pl.surv[k]);
        if n > d {
            greenwood += d / (n * (n - d));
        }
        let (se, lower, upper) = if s <= 0.0 {
            (None, 0.0, 0.0)
        } else {
            let se_log = greenwood.sqrt();
            let (lo, hi) = match conf_type {
                ConfType::Plain => (s - z * s * se_log, s + z * s * se_log),
                ConfType::Log => (s * (-z * se_log).exp(), s * (z * se_log).exp()),
                ConfType::LogLog => {
                    if s >= 1.0 {
                        (1.0, 1.0)
                    } else {
                        let eta = (-s.ln()).ln();
                        let se2 = se_log / s.ln().abs();
                        let a = (-(eta + z * se2).exp()).exp();
                        let b = (-(eta - z * se2).exp()).exp();
                        (a.min(b), a.max(b))
                    }
                }
            };
            (Some(s * se_log), lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
        };
        points.push(SurvPoint {
            time: pl.times[k],
            n_risk: n.round() as usize,
            n_event: d.round() as usize,
            surv: s,
            se,
            lower,
            upper,
        });
    }
    let n_events = status.iter().filter(|&&s| s).count();
    let mut flags = Vec::new();
    if n_events == 0 {
        flags.push("no_events".to_string());
    }
    SurvCurve {
        group,
        n: time.len(),
        n_events,
        points,
        flags,
    }
}

/// Group label of each observation (None when missing) and the level order.
fn group_labels(
    data: &ValidatedSurvivalData,
    column: &str,
) -> Result<(Vec<Option<usize>>, Vec<String>)> {
    let cov = data
        .covariates
        .get(column)
        .map_err(|_| Error::UnknownGroupColumn(column.to_string()))?;
    let mut levels: Vec<String> = Vec::new();
    let codes = (0..data.len())
        .map(|i| {
            cov.label(i)
                .map(|l| match levels.iter().position(|x| *x == l) {
                    Some(p) => p,
                    None => {
                        levels.push(l);
                        levels.len() - 1
                    }
                })
        })
        .collect();
    Ok((codes, levels))
}

/// Kaplan-Meier curves, one per level of `group_by` when given.
pub fn kaplan_meier(
    data: &ValidatedSurvivalData,
    group_by: Option<&str>,
    conf_level: f64,
    conf_type: ConfType,
) -> Result<Vec<SurvCurve>> {
    if !(0.0..1.0).contains(&conf_level) || conf_level == 0.0 {
        return Err(Error::InvalidParameter(
            "conf_level must be in (0, 1)".into(),
        ));
    }
    if data.is_empty() {
        return Err(Error::InvalidParameter("no observations".into()));
    }
    match group_by {
        None => Ok(vec![km_curve(
            &data.time,
            &data.status,
            None,
            conf_level,
            conf_type,
        )]),
        Some(col) => {
            let (codes, levels) = group_labels(data, col)?;
            Ok(levels
                .iter()
                .enumerate()
                .map(|(g, label)| {
                    let idx: Vec<usize> =
                        (0..data.len()).filter(|&i| codes[i] == Some(g)).collect();
                    let t: Vec<f64> = idx.iter().map(|&i| data.time[i]).collect();
                    let s: Vec<bool> = idx.iter().map(|&i| data.status[i]).collect();
                    km_curve(&t, &s, Some(label.clone()), conf_level, conf_type)
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub observed: f64,
    pub expected: f64,
}

/// Result of a k-sample G-rho test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTestResult {
    pub groups: Vec<GroupSummary>,
    pub chi_squared: f64,
    pub df: usize,
    pub p_value: f64,
    pub rho: f64,
}

/// Core of the G-rho test on integer group codes `0..n_groups`.
pub(crate) fn rank_test_codes(
    time: &[f64],
    status: &[bool],
    group: &[usize],
    n_groups: usize,
    rho: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64, usize)> {
    let present: Vec<bool> = (0..n_groups).map(|g| group.contains(&g)).collect();
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::SingleGroup);
    }
    if !status.iter().any(|&s| s) {
        return Err(Error::NoEvents);
    }
    let events: Vec<f64> = status.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    let pooled = ProductLimit::fit(time, &events, None);

    let mut obs = vec![0.0; n_groups];
    let mut exp = vec![0.0; n_groups];
    let mut var = DMatrix::<f64>::zeros(n_groups, n_groups);
    let event_times = unique_sorted(time.iter().zip(status).filter(|(_, &s)| s).map(|(&t, _)| t));
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
    let mut n_risk_g = vec![0.0; n_groups];
    for &g in group {
        n_risk_g[g] += 1.0;
    }
    let mut pos = 0;
    for &t in &event_times {
        while pos < order.len() && time[order[pos]] < t {
            n_risk_g[group[order[pos]]] -= 1.0;
            pos += 1;
        }
        let mut d_g = vec![0.0; n_groups];
        let mut k = pos;
        while k < order.len() && time[order[k]] == t {
            if status[order[k]] {
                d_g[group[order[k]]] += 1.0;
            }
            k += 1;
        }
        let n: f64 = n_risk_g.iter().sum();
        let d: f64 = d_g.iter().sum();
        let w = if rho == 0.0 {
            1.0
        } else {
            pooled.before(t).powf(rho)
        };
        for g in 0..n_groups {
            obs[g] += w * d_g[g];
            exp[g] += w * d * n_risk_g[g] / n;
        }
        if n > 1.0 {
            let c = w * w * d * (n - d) / (n - 1.0);
            for g in 0..n_groups {
                for h in 0..n_groups {
                    let delta = if g == h { 1.0 } else { 0.0 };
                    var[(g, h)] += c * (n_risk_g[g] / n) * (delta - n_risk_g[h] / n);
                }
            }
        }
    }

    let keep: Vec<usize> = (0..n_groups).filter(|&g| present[g]).collect();
    let m = keep.len() - 1;
    let diff = DVector::from_iterator(m, keep[..m].iter().map(|&g| obs[g] - exp[g]));
    let v = DMatrix::from_fn(m, m, |i, j| var[(keep[i], keep[j])]);
    let (stat, df) = quadratic_form(&v, &diff);
    Ok((obs, exp, stat, df))
}

/// `x' V^- x` with a pseudo-inverse, and the rank of `V`.
pub(crate) fn quadratic_form(v: &DMatrix<f64>, x: &DVector<f64>) -> (f64, usize) {
    if let Some(ch) = v.clone().cholesky() {
        return (x.dot(&ch.solve(x)), x.len());
    }
    let svd = v.clone().svd(true, true);
    let tol = 1e-10 * svd.singular_values.max().max(1e-300);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let pinv = svd.pseudo_inverse(tol).expect("svd computed with vectors");
    ((x.transpose() * pinv * x)[(0, 0)], rank)
}

/// Compares survival across levels of `group_by`; rho = 0 is the log-rank
/// test, rho = 1 the Peto-Peto form of the Gehan-Wilcoxon test.
pub fn rank_test(data: &ValidatedSurvivalData, group_by: &str, rho: f64) -> Result<RankTestResult> {
    let (codes, levels) = group_labels(data, group_by)?;
    let idx: Vec<usize> = (0..data.len()).filter(|&i| codes[i].is_some()).collect();
    let time: Vec<f64> = idx.iter().map(|&i| data.time[i]).collect();
    let status: Vec<bool> = idx.iter().map(|&i| data.status[i]).collect();
    let group: Vec<usize> = idx.iter().map(|&i| codes[i].unwrap()).collect();
    let (obs, exp, stat, df) = rank_test_codes(&time, &status, &group, levels.len(), rho)?;
    let groups = levels
        .iter()
        .enumerate()
        .map(|(g, l)| GroupSummary {
            group: l.clone(),
            n: group.iter().filter(|&&x| x == g).count(),
            observed: obs[g],
            expected: exp[g],
        })
        .collect();
    Ok(RankTestResult {
        groups,
        chi_squared: stat,
        df,
        p_value: chi2_sf(stat, df),
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariate, CovariateTable, CovariateValues};

    fn data(time: &[f64], status: &[u8], group: Option<&[&str]>) -> ValidatedSurvivalData {
        let n = time.len();
        let cols = match group {
            Some(g) => {
                let mut levels: Vec<String> = Vec::new();
                let codes = g
                    .iter()
                    .map(|l| {
                        Some(match levels.iter().position(|x| x == l) {
                            Some(p) => p,
                            None => {
                                levels.push(l.to_string());
                                levels.len() - 1
                            }
                        })
                    })
                    .collect();
                vec![Covariate {
                    name: "g".into(),
                    values: CovariateValues::Categorical { levels, codes },
                }]
            }
            None => vec![],
        };
        ValidatedSurvivalData::from_vectors(
            time.to_vec(),
            status.iter().map(|&s| s == 1).collect(),
            CovariateTable::new(cols, n),
        )
    }

    #[test]
    fn single_event() {
        let c = &kaplan_meier(&data(&[5.0], &[1], None), None, 0.95, ConfType::Log).unwrap()[0];
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.surv_at(4.999), 1.0);
        assert_eq!(c.surv_at(5.0), 0.0);
        assert_eq!(c.points[0].se, None);
    }

    #[test]
    fn uncensored_is_empirical() {
        let c = &kaplan_meier(
            &data(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 1], None),
            None,
            0.95,
            ConfType::Log,
        )
        .unwrap()[0];
        let s: Vec<f64> = c.points.iter().map(|p| p.surv).collect();
        assert_eq!(s, vec![0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn hand_product_limit_with_censoring_and_ties() {
        let c = &kaplan_meier(
            &data(&[1.0, 2.0, 2.0, 3.0], &[0, 1, 1, 1], None),
            None,
            0.95,
            ConfType::Log,
        )
        .unwrap()[0];
        assert_eq!(c.points.len(), 2);
        assert_eq!((c.points[0].n_risk, c.points[0].n_event), (3, 2));
        assert!((c.points[0].surv - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.points[1].surv, 0.0);
    }

    #[test]
    fn deaths_precede_censoring_at_ties() {
        let c = &kaplan_meier(
            &data(&[2.0, 2.0, 4.0], &[1, 0, 1], None),
            None,
            0.95,
            ConfType::Log,
        )
        .unwrap()[0];
        assert_eq!(c.points[0].n_risk, 3);
        assert_eq!(c.points[1].n_risk, 1);
    }

    #[test]
    fn greenwood_and_log_interval() {
        // n = 5, events at 1 and 3, censoring at 2.
        let c = &kaplan_meier(
            &data(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1, 0, 1, 0, 0], None),
            None,
            0.95,
            ConfType::Log,
        )
        .unwrap()[0];
        let s1 = 0.8;
        let s2 = 0.8 * (1.0 - 1.0 / 3.0);
        let v2: f64 = 1.0 / (5.0 * 4.0) + 1.0 / (3.0 * 2.0);
        assert!((c.points[1].surv - s2).abs() < 1e-15);
        assert!((c.points[1].se.unwrap() - s2 * v2.sqrt()).abs() < 1e-15);
        let z = normal_quantile(0.975);
        assert!((c.points[1].lower - s2 * (-z * v2.sqrt()).exp()).abs() < 1e-14);
        assert!((c.points[0].upper - (s1 * (z * (0.05f64).sqrt()).exp()).min(1.0)).abs() < 1e-14);
    }

    #[test]
    fn all_censored_is_flat_with_flag() {
        let c =
            &kaplan_meier(&data(&[1.0, 2.0], &[0, 0], None), None, 0.95, ConfType::Log).unwrap()[0];
        assert!(c.points.is_empty());
        assert_eq!(c.flags, vec!["no_events".to_string()]);
        assert_eq!(c.surv_at(10.0), 1.0);
    }

    #[test]
    fn groups_split_curves() {
        let d = data(
            &[1.0, 2.0, 3.0, 4.0],
            &[1, 1, 1, 1],
            Some(&["a", "b", "a", "b"]),
        );
        let curves = kaplan_meier(&d, Some("g"), 0.95, ConfType::Log).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].group.as_deref(), Some("a"));
        assert_eq!(
            kaplan_meier(&d, Some("zz"), 0.95, ConfType::Log),
            Err(Error::UnknownGroupColumn("zz".into()))
        );
    }

    #[test]
    fn identical_groups_have_zero_statistic() {
        let d = data(
            &[1.0, 3.0, 5.0, 1.0, 3.0, 5.0],
            &[1, 0, 1, 1, 0, 1],
            Some(&["a", "a", "a", "b", "b", "b"]),
        );
        for rho in [0.0, 1.0] {
            let r = rank_test(&d, "g", rho).unwrap();
            assert!(r.chi_squared.abs() < 1e-12);
            assert!((r.p_value - 1.0).abs() < 1e-12);
            assert_eq!(r.df, 1);
        }
    }

    /// Direct summation of the hypergeometric moments at each event time.
    fn brute_force_logrank(time: &[f64], status: &[u8], group: &[usize]) -> (f64, f64, f64) {
        let mut o = 0.0;
        let mut e = 0.0;
        let mut v = 0.0;
        let mut ts: Vec<f64> = time
            .iter()
            .zip(status)
            .filter(|(_, &s)| s == 1)
            .map(|(&t, _)| t)
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        for t in ts {
            let n = time.iter().filter(|&&x| x >= t).count() as f64;
            let n1 = (0..time.len())
                .filter(|&i| time[i] >= t && group[i] == 0)
                .count() as f64;
            let d = (0..time.len())
                .filter(|&i| time[i] == t && status[i] == 1)
                .count() as f64;
            let d1 = (0..time.len())
                .filter(|&i| time[i] == t && status[i] == 1 && group[i] == 0)
                .count() as f64;
            o += d1;
            e += d * n1 / n;
            if n > 1.0 {
                v += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
            }
        }
        (o, e, (o - e).powi(2) / v)
    }

    #[test]
    fn logrank_matches_direct_summation() {
        let time = [2.0, 4.0, 4.0, 3.0, 6.0, 7.0];
        let status = [1, 1, 0, 1, 1, 0];
        let groups = ["a", "a", "a", "b", "b", "b"];
        let (o, e, chi) = brute_force_logrank(&time, &status, &[0, 0, 0, 1, 1, 1]);
        let r = rank_test(&data(&time, &status, Some(&groups)), "g", 0.0).unwrap();
        assert!((r.groups[0].observed - o).abs() < 1e-12);
        assert!((r.groups[0].expected - e).abs() < 1e-12);
        assert!((r.chi_squared - chi).abs() < 1e-12);
        let total: f64 = r.groups.iter().map(|g| g.observed - g.expected).sum();
        assert!(total.abs() < 1e-10);
    }

    #[test]
    fn single_group_rejected() {
        let d = data(&[1.0, 2.0], &[1, 1], Some(&["a", "a"]));
        assert_eq!(rank_test(&d, "g", 0.0), Err(Error::SingleGroup));
        let d = data(&[1.0, 2.0], &[0, 0], Some(&["a", "b"]));
        assert_eq!(rank_test(&d, "g", 0.0), Err(Error::NoEvents));
    }
}
