//! Local and global tests of the Markov assumption.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{idm_to_long, LongFormatData, ValidatedIdmData};
use crate::error::{Error, Result};
use crate::msmprob::aj::{landmark_aalen_johansen, occupants};
use crate::msmprob::bootstrap::resample_indices;
use crate::msmprob::{aalen_johansen, landmark_idm, ClockMode, ProbabilityCurve};
use crate::regression::cox::{fit_cox, CoxData, Ties};
use crate::stats::{chi2_sf, quantile_sorted, sd, two_sided_p};
use crate::survival::rank_test_codes;

/// Data for Markov tests: long format, plus the wide illness-death records
/// when available (which selects the LM estimator over LMAJ).
#[derive(Debug, Clone)]
pub struct MarkovData {
    pub idm: Option<ValidatedIdmData>,
    pub long: LongFormatData,
}

impl MarkovData {
    pub fn from_idm(d: ValidatedIdmData) -> Result<MarkovData> {
        let long = idm_to_long(&d)?;
        Ok(MarkovData { idm: Some(d), long })
    }

    pub fn from_long(long: LongFormatData) -> MarkovData {
        MarkovData { idm: None, long }
    }

    pub fn n_subjects(&self) -> usize {
        self.long.n_subjects()
    }

    pub fn resample(&self, idx: &[usize]) -> Result<MarkovData> {
        match &self.idm {
            Some(d) => MarkovData::from_idm(d.select(idx)),
            None => Ok(MarkovData::from_long(self.long.resample(idx))),
        }
    }

    fn check_transition(&self, from: usize, to: usize) -> Result<usize> {
        self.long.system.number(from, to).ok_or_else(|| {
            Error::InvalidParameter(format!("{from} -> {to} is not a transition of the system"))
        })
    }

    /// Times relevant to landmarking in `h`: entries into `h`, or exits
    /// from it when `h` is the initial state.
    pub fn landmark_times(&self, h: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .long
            .episodes()
            .iter()
            .filter(|e| e.state == h)
            .filter_map(|e| {
                if h == 1 {
                    e.exit.map(|_| e.stop)
                } else {
                    Some(e.start)
                }
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TransitionRef {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryGroups {
    pub split: String,
    pub threshold: f64,
    pub sizes: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTestResult {
    pub method: String,
    pub s: f64,
    pub transition: TransitionRef,
    pub statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    pub p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_boot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<HistoryGroups>,
    pub flags: Vec<String>,
}

fn row_curve(curves: &[ProbabilityCurve], to: usize) -> Result<Vec<f64>> {
    curves
        .iter()
        .find(|c| c.to == to)
        .map(|c| c.estimates())
        .ok_or_else(|| Error::InvalidParameter(format!("state {to} is not reachable")))
}

/// Signed area between the Aalen-Johansen and Markov-free estimates of
/// `p_hj(s, .)` over `(s, t_max]`.
fn auc_statistic(d: &MarkovData, s: f64, from: usize, to: usize, t_max: f64) -> Result<f64> {
    let mut grid: Vec<f64> = d
        .long
        .rows
        .iter()
        .filter(|r| r.status && r.tstop > s && r.tstop <= t_max)
        .map(|r| r.tstop)
        .collect();
    grid.push(s);
    grid.push(t_max);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let aj = aalen_johansen(&d.long, s, Some(&grid))?;
    let aj = row_curve(
        &aj.into_iter()
            .filter(|c| c.from == from)
            .collect::<Vec<_>>(),
        to,
    )?;
    let free = match &d.idm {
        Some(idm) => {
            let lm = landmark_idm(idm, s, Some(&grid))?;
            let row: Vec<ProbabilityCurve> = lm.into_iter().filter(|c| c.from == from).collect();
            if row
                .iter()
                .any(|c| c.flags.iter().any(|f| f == "empty_landmark_set"))
            {
                return Err(Error::EmptyLandmarkSet { state: from, s });
            }
            row_curve(&row, to)?
        }
        None => row_curve(&landmark_aalen_johansen(&d.long, s, from, Some(&grid))?, to)?,
    };
    let mut area = 0.0;
    for k in 0..grid.len() - 1 {
        area += (aj[k] - free[k]) * (grid[k + 1] - grid[k]);
    }
    Ok(area)
}

fn last_transition_time(d: &MarkovData) -> f64 {
    d.long
        .rows
        .iter()
        .filter(|r| r.status)
        .map(|r| r.tstop)
        .fold(0.0, f64::max)
}

/// AUC test at landmark `s` with a bootstrap standard deviation.
pub fn local_auc_test(
    d: &MarkovData,
    s: f64,
    from: usize,
    to: usize,
    n_boot: usize,
    seed: u64,
) -> Result<LocalTestResult> {
    let n = d.long.system.n_states();
    if !(1..=n).contains(&from)
        || !(1..=n).contains(&to)
        || !(from == to || d.long.system.reachability()[from - 1][to - 1])
    {
        return Err(Error::InvalidParameter(format!(
            "state {to} is not reachable from {from}"
        )));
    }
    if n_boot < 2 {
        return Err(Error::InvalidParameter("n_boot must be at least 2".into()));
    }
    if occupants(&d.long, from, s).is_empty() {
        return Err(Error::EmptyLandmarkSet { state: from, s });
    }
    let t_max = last_transition_time(d);
    let stat = auc_statistic(d, s, from, to, t_max)?;
    let reps: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let idx = resample_indices(d.n_subjects(), seed, r);
            let rd = d.resample(&idx).ok()?;
            auc_statistic(&rd, s, from, to, t_max)
                .ok()
                .filter(|v| v.is_finite())
        })
        .collect();
    let ok: Vec<f64> = reps.iter().flatten().copied().collect();
    let failed = n_boot - ok.len();
    if failed * 5 > n_boot || ok.len() < 2 {
        return Err(Error::BootstrapFailed {
            failed,
            total: n_boot,
        });
    }
    let sdev = sd(&ok);
    let mut flags = Vec::new();
    let p = if sdev > 0.0 {
        two_sided_p(stat / sdev)
    } else {
        flags.push("degenerate_variance".to_string());
        1.0
    };
    if failed > 0 {
        flags.push(format!("bootstrap_failed_{failed}"));
    }
    Ok(LocalTestResult {
        method: "auc".into(),
        s,
        transition: TransitionRef { from, to },
        statistic: stat,
        sd: Some(sdev),
        p_value: p,
        n_boot: Some(ok.len()),
        seed: Some(seed),
        groups: None,
        flags,
    })
}

/// Subjects in `from` at `s`: (follow-up end, transition-to-`to` indicator, entry time).
fn landmark_sojourns(
    d: &MarkovData,
    s: f64,
    from: usize,
    to: usize,
) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
    let eps: Vec<_> = d
        .long
        .episodes()
        .into_iter()
        .filter(|e| e.state == from && e.occupies(s))
        .collect();
    (
        eps.iter().map(|e| e.stop).collect(),
        eps.iter().map(|e| e.exit == Some(to)).collect(),
        eps.iter().map(|e| e.start).collect(),
    )
}

/// Median split of entry time into `from`; `None` if it yields one group.
fn split_groups(entry: &[f64]) -> Option<(Vec<usize>, f64)> {
    let mut sorted = entry.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return None;
    }
    let median = quantile_sorted(&sorted, 0.5);
    let g: Vec<usize> = entry.iter().map(|&e| usize::from(e > median)).collect();
    (g.contains(&0) && g.contains(&1)).then_some((g, median))
}

/// Log-rank test at `s` comparing subjects in `from` split by entry time.
pub fn local_logrank_test(
    d: &MarkovData,
    s: f64,
    from: usize,
    to: usize,
) -> Result<LocalTestResult> {
    d.check_transition(from, to)?;
    let (time, status, entry) = landmark_sojourns(d, s, from, to);
    if time.is_empty() {
        return Err(Error::EmptyLandmarkSet { state: from, s });
    }
    let (groups, threshold) = split_groups(&entry).ok_or(Error::SingleGroup)?;
    let (_, _, stat, df) = rank_test_codes(&time, &status, &groups, 2, 0.0)?;
    let n1 = groups.iter().filter(|&&g| g == 1).count();
    Ok(LocalTestResult {
        method: "logrank".into(),
        s,
        transition: TransitionRef { from, to },
        statistic: stat,
        sd: None,
        p_value: chi2_sf(stat, df),
        n_boot: None,
        seed: None,
        groups: Some(HistoryGroups {
            split: "entry_time_median".into(),
            threshold,
            sizes: [groups.len() - n1, n1],
        }),
        flags: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalTestResult {
    pub method: String,
    pub transition: TransitionRef,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coef: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clock: Option<ClockMode>,
    pub s_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub statistics: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proportion_rejections: Option<f64>,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_boot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_perm: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub local: Vec<LocalTestResult>,
    pub dropped: usize,
    pub flags: Vec<String>,
}

impl GlobalTestResult {
    fn empty(method: &str, from: usize, to: usize, alpha: f64) -> GlobalTestResult {
        GlobalTestResult {
            method: method.into(),
            transition: TransitionRef { from, to },
            coef: None,
            se: None,
            clock: None,
            s_values: Vec::new(),
            p_values: Vec::new(),
            statistics: Vec::new(),
            statistic: None,
            p_value: None,
            proportion_rejections: None,
            alpha,
            n_boot: None,
            n_perm: None,
            seed: None,
            local: Vec::new(),
            dropped: 0,
            flags: Vec::new(),
        }
    }
}

/// Cox model for one transition with the entry time into its origin state
/// as covariate; a significant effect questions the Markov assumption.
pub fn global_cox_test(
    d: &MarkovData,
    from: usize,
    to: usize,
    clock: ClockMode,
    ties: Ties,
    alpha: f64,
) -> Result<GlobalTestResult> {
    let trans = d.check_transition(from, to)?;
    let rows: Vec<_> = d.long.transition_rows(trans).collect();
    let entry: Vec<f64> = rows.iter().map(|r| r.tstart).collect();
    if entry.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::DegenerateCovariate { from, to });
    }
    let (start, stop) = match clock {
        ClockMode::Markov => (entry.clone(), rows.iter().map(|r| r.tstop).collect()),
        ClockMode::SemiMarkov => (
            vec![0.0; rows.len()],
            rows.iter().map(|r| r.duration).collect(),
        ),
    };
    let data = CoxData::new(
        start,
        stop,
        rows.iter().map(|r| r.status).collect(),
        DMatrix::from_column_slice(rows.len(), 1, &entry),
        vec!["entry_time".into()],
    )?;
    let fit = fit_cox(&data, ties)?;
    let c = &fit.coefficients[0];
    let mut out = GlobalTestResult::empty("cox", from, to, alpha);
    out.coef = Some(c.coef);
    out.se = Some(c.se);
    out.clock = Some(clock);
    out.statistic = Some(c.z);
    out.p_value = Some(c.p);
    if !fit.infinite.is_empty() {
        out.flags.push("infinite_coefficient".into());
    }
    Ok(out)
}

/// Default landmark grid: the 5th, 10th, 20th, ..., 90th percentiles of the
/// landmark-relevant times of `from`.
pub fn default_landmarks(d: &MarkovData, from: usize, percentiles: Option<&[f64]>) -> Vec<f64> {
    let default = [5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0];
    let pct = percentiles.unwrap_or(&default);
    let times = d.landmark_times(from);
    if times.is_empty() {
        return Vec::new();
    }
    crate::stats::unique_sorted(pct.iter().map(|&p| quantile_sorted(&times, p / 100.0)))
}

/// Local AUC tests over a landmark grid and their rejection proportion.
pub fn global_auc_test(
    d: &MarkovData,
    from: usize,
    to: usize,
    percentiles: Option<&[f64]>,
    n_boot: usize,
    alpha: f64,
    seed: u64,
) -> Result<GlobalTestResult> {
    let s_grid = default_landmarks(d, from, percentiles);
    let mut out = GlobalTestResult::empty("auc", from, to, alpha);
    for (k, &s) in s_grid.iter().enumerate() {
        match local_auc_test(d, s, from, to, n_boot, seed.wrapping_add(k as u64)) {
            Ok(r) => {
                out.s_values.push(s);
                out.p_values.push(r.p_value);
                out.statistics.push(r.statistic);
                out.local.push(r);
            }
            Err(Error::EmptyLandmarkSet { .. }) | Err(Error::BootstrapFailed { .. }) => {
                out.dropped += 1
            }
            Err(e) => return Err(e),
        }
    }
    if out.s_values.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "only {} usable landmark times for the global AUC test",
            out.s_values.len()
        )));
    }
    let rejected = out.p_values.iter().filter(|&&p| p < alpha).count();
    out.proportion_rejections = Some(rejected as f64 / out.p_values.len() as f64);
    out.n_boot = Some(n_boot);
    out.seed = Some(seed);
    Ok(out)
}

struct LogrankLandmark {
    time: Vec<f64>,
    status: Vec<bool>,
    groups: Vec<usize>,
    stat: f64,
}

/// Maximum over landmarks of the entry-time log-rank statistics, calibrated
/// by permuting group labels within each landmark subsample.
pub fn global_logrank_test(
    d: &MarkovData,
    from: usize,
    to: usize,
    s_grid: Option<&[f64]>,
    n_perm: usize,
    alpha: f64,
    seed: u64,
) -> Result<GlobalTestResult> {
    d.check_transition(from, to)?;
    if n_perm < 1 {
        return Err(Error::InvalidParameter("n_perm must be positive".into()));
    }
    let grid = match s_grid {
        Some(g) => g.to_vec(),
        None => default_landmarks(d, from, None),
    };
    let mut out = GlobalTestResult::empty("logrank", from, to, alpha);
    let mut usable = Vec::new();
    for &s in &grid {
        let (time, status, entry) = landmark_sojourns(d, s, from, to);
        let Some((groups, _)) = split_groups(&entry) else {
            out.dropped += 1;
            continue;
        };
        match rank_test_codes(&time, &status, &groups, 2, 0.0) {
            Ok((_, _, stat, df)) => {
                out.s_values.push(s);
                out.statistics.push(stat);
                out.p_values.push(chi2_sf(stat, df));
                usable.push(LogrankLandmark {
                    time,
                    status,
                    groups,
                    stat,
                });
            }
            Err(Error::NoEvents) | Err(Error::SingleGroup) => out.dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if usable.is_empty() {
        return Err(Error::SingleGroup);
    }
    let observed = usable
        .iter()
        .map(|u| u.stat)
        .fold(f64::NEG_INFINITY, f64::max);
    let exceed: usize = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut best = f64::NEG_INFINITY;
            for u in &usable {
                let mut g = u.groups.clone();
                g.shuffle(&mut rng);
                let stat = rank_test_codes(&u.time, &u.status, &g, 2, 0.0).map_or(0.0, |x| x.2);
                best = best.max(stat);
            }
            usize::from(best >= observed - 1e-12 * observed.abs().max(1.0))
        })
        .sum();
    out.statistic = Some(observed);
    out.p_value = Some((1 + exceed) as f64 / (1 + n_perm) as f64);
    out.n_perm = Some(n_perm);
    out.seed = Some(seed);
    Ok(out)
}
