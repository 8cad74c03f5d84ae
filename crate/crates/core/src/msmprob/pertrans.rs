//! Per-transition Cox models and Breslow-based conditional prediction.

use std::collections::BTreeMap;

use serde::Serialize;

use super::aj::{matrix_curves, product_integral, Increments};
use super::curve::{resolve_grid, ClockMode, Conditioning, Method, ProbabilityCurve};
use crate::data::LongFormatData;
use crate::error::{Error, Result};
use crate::regression::cox::{breslow_increments, fit_cox, CoxFit, SurvFrame, Ties};
use crate::regression::Design;

/// Cox data of one transition under the given clock.
pub fn transition_frame(long: &LongFormatData, trans: usize, clock: ClockMode) -> SurvFrame {
    let rows: Vec<_> = long.transition_rows(trans).collect();
    let subjects: Vec<usize> = rows.iter().map(|r| r.subject).collect();
    SurvFrame {
        start: rows
            .iter()
            .map(|r| match clock {
                ClockMode::Markov => r.tstart,
                ClockMode::SemiMarkov => 0.0,
            })
            .collect(),
        stop: rows
            .iter()
            .map(|r| match clock {
                ClockMode::Markov => r.tstop,
                ClockMode::SemiMarkov => r.duration,
            })
            .collect(),
        status: rows.iter().map(|r| r.status).collect(),
        covariates: long.covariates.select(&subjects),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitError {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionFit {
    pub trans: usize,
    pub from: usize,
    pub to: usize,
    pub n: usize,
    pub n_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<CoxFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<FitError>,
    #[serde(skip)]
    pub design: Option<Design>,
}

/// One Cox fit per transition; failures are reported inline.
pub fn per_transition_cox(
    long: &LongFormatData,
    covariates: &[String],
    clock: ClockMode,
    ties: Ties,
) -> Result<Vec<TransitionFit>> {
    for c in covariates {
        long.covariates.get(c)?;
    }
    let mut out = Vec::new();
    for t in long.system.transitions() {
        let frame = transition_frame(long, t.number, clock);
        let attempt = frame
            .cox_data(covariates, None)
            .and_then(|(data, design)| fit_cox(&data, ties).map(|f| (f, design)));
        let n = frame.len();
        let n_events = frame.status.iter().filter(|&&s| s).count();
        out.push(match attempt {
            Ok((fit, design)) => TransitionFit {
                trans: t.number,
                from: t.from,
                to: t.to,
                n: fit.n,
                n_events: fit.n_events,
                fit: Some(fit),
                error: None,
                design: Some(design),
            },
            Err(e) => TransitionFit {
                trans: t.number,
                from: t.from,
                to: t.to,
                n,
                n_events,
                fit: None,
                error: Some(FitError {
                    error: e.code().to_string(),
                    message: e.to_string(),
                }),
                design: None,
            },
        });
    }
    Ok(out)
}

/// Transition probabilities for a covariate profile from clock-forward Cox
/// models per transition and their Breslow baseline hazards.
pub fn breslow_conditional(
    long: &LongFormatData,
    s: f64,
    grid: Option<&[f64]>,
    covariates: &[String],
    profile: &BTreeMap<String, String>,
    ties: Ties,
) -> Result<Vec<ProbabilityCurve>> {
    let sys = &long.system;
    let grid = resolve_grid(
        grid,
        long.rows.iter().filter(|r| r.status).map(|r| r.tstop),
        s,
    )?;
    let fits = per_transition_cox(long, covariates, ClockMode::Markov, ties)?;
    let mut events: Vec<(f64, usize, usize, f64)> = Vec::new();
    let mut flags = Vec::new();
    for tf in &fits {
        match (&tf.fit, &tf.design) {
            (Some(fit), Some(design)) => {
                let profile_x = design.encode_profile(profile)?;
                let frame = transition_frame(long, tf.trans, ClockMode::Markov);
                let (data, _) = frame.cox_data(covariates, None)?;
                for (u, a) in breslow_increments(&data, &fit.coef, profile_x.as_slice()) {
                    if u > s {
                        events.push((u, tf.from - 1, tf.to - 1, a));
                    }
                }
                if !fit.infinite.is_empty() {
                    flags.push(format!("infinite_coefficient_{}", tf.trans));
                }
            }
            _ => {
                let err = tf.error.as_ref().expect("failed fits carry an error");
                if err.error != Error::NoEvents.code() {
                    return Err(Error::Diverged(format!(
                        "transition {} -> {}: {}",
                        tf.from, tf.to, err.message
                    )));
                }
                flags.push(format!("no_events_{}", tf.trans));
            }
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut inc = Increments::default();
    for (u, h, j, a) in events {
        if inc.times.last() != Some(&u) {
            inc.times.push(u);
            inc.incs.push(Vec::new());
        }
        inc.incs.last_mut().unwrap().push((h, j, a));
    }
    let (mats, capped) = product_integral(sys.n_states(), &inc, s, &grid, true);
    let rows: Vec<usize> = (1..=sys.n_states())
        .filter(|&h| !sys.is_absorbing(h))
        .collect();
    let mut curves = matrix_curves(Method::Breslow, sys, s, &grid, &mats, &rows);
    for c in curves.iter_mut() {
        if capped {
            c.flag("increment_capped");
        }
        for f in &flags {
            c.flag(f);
        }
        c.conditioning = Some(Conditioning::Profile {
            values: profile.clone(),
        });
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{idm_to_long, Covariate, CovariateTable, CovariateValues, ValidatedIdmData};
    use crate::msmprob::aj::aalen_johansen;

    fn long_with_x(x: &[f64]) -> LongFormatData {
        let rows = [
            (1.0, true, 4.0, true),
            (2.0, false, 2.0, true),
            (3.0, true, 6.0, false),
            (2.5, false, 2.5, false),
            (3.0, true, 5.0, true),
            (4.0, false, 4.0, true),
        ];
        let cov = Covariate {
            name: "x".into(),
            values: CovariateValues::Numeric(x.iter().map(|&v| Some(v)).collect()),
        };
        let d = ValidatedIdmData::from_vectors(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            rows.iter().map(|r| r.3).collect(),
            CovariateTable::new(vec![cov], rows.len()),
        )
        .unwrap();
        idm_to_long(&d).unwrap()
    }

    #[test]
    fn no_covariates_equals_aj() {
        let long = long_with_x(&[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let grid = [1.0, 2.5, 3.0, 4.5, 6.0];
        let br = breslow_conditional(&long, 0.0, Some(&grid), &[], &BTreeMap::new(), Ties::Efron)
            .unwrap();
        let aj = aalen_johansen(&long, 0.0, Some(&grid)).unwrap();
        for (a, b) in br.iter().zip(&aj) {
            assert_eq!((a.from, a.to), (b.from, b.to));
            for (p, q) in a.grid.iter().zip(&b.grid) {
                assert!((p.est - q.est).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clocks_coincide_out_of_initial_state() {
        let long = long_with_x(&[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let cov = vec!["x".to_string()];
        let a = per_transition_cox(&long, &cov, ClockMode::Markov, Ties::Efron).unwrap();
        let b = per_transition_cox(&long, &cov, ClockMode::SemiMarkov, Ties::Efron).unwrap();
        for k in 0..2 {
            let (fa, fb) = (a[k].fit.as_ref().unwrap(), b[k].fit.as_ref().unwrap());
            assert!((fa.coef[0] - fb.coef[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn hand_breslow_then_product() {
        // One covariate; profile x = 1.
        let x = [0.0, 0.5, 0.0, 1.0, 1.0, 0.0];
        let long = long_with_x(&x);
        let cov = vec!["x".to_string()];
        let fits = per_transition_cox(&long, &cov, ClockMode::Markov, Ties::Efron).unwrap();
        let b: Vec<f64> = fits
            .iter()
            .map(|f| f.fit.as_ref().map_or(0.0, |f| f.coef[0]))
            .collect();
        let profile = BTreeMap::from([("x".to_string(), "1".to_string())]);
        let br =
            breslow_conditional(&long, 0.0, Some(&[6.0]), &cov, &profile, Ties::Efron).unwrap();

        // Hand computation. State-1 risk sets by exit time, with covariates:
        // t=1: all six; t=2: {2,3,4,5,6}; t=3: {3,5,6}; t=4: {6}.
        let e = |k: usize, xs: &[f64]| xs.iter().map(|v| (b[k] * v).exp()).sum::<f64>();
        let r = |k: usize| (b[k] * 1.0).exp();
        let mut m = nalgebra::DMatrix::<f64>::identity(3, 3);
        let mut step = |a12: f64, a13: f64, a23: f64| {
            let mut s = nalgebra::DMatrix::<f64>::identity(3, 3);
            s[(0, 1)] = a12;
            s[(0, 2)] = a13;
            s[(0, 0)] = 1.0 - a12 - a13;
            s[(1, 2)] = a23;
            s[(1, 1)] = 1.0 - a23;
            m = &m * s;
        };
        // Transitions: 1 = 1->2, 2 = 1->3, 3 = 2->3.
        step(r(0) / e(0, &x), 0.0, 0.0);
        step(0.0, r(1) / e(1, &[0.5, 0.0, 1.0, 1.0, 0.0]), 0.0);
        // t=3: two events 1->2 (subjects 3 and 5, x = 0 and 1), Efron-free since
        // Breslow increments use d / S0.
        step(2.0 * r(0) / e(0, &[0.0, 1.0, 0.0]), 0.0, 0.0);
        // t=4: 1->3 for subject 6 (alone in state 1); 2->3 for subject 1
        // (state 2 holds subjects 1, 3, 5 with x = 0, 0, 1).
        step(0.0, r(1) / e(1, &[0.0]), r(2) / e(2, &[0.0, 0.0, 1.0]));
        // t=5: 2->3 for subject 5; state 2 holds {3, 5}.
        step(0.0, 0.0, r(2) / e(2, &[0.0, 1.0]));
        for c in &br {
            let want = m[(c.from - 1, c.to - 1)];
            assert!(
                (c.grid[0].est - want).abs() < 1e-10,
                "{} {} {} {}",
                c.from,
                c.to,
                c.grid[0].est,
                want
            );
        }
    }
}
