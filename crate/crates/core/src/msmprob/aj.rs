//! Product-integral estimators over long-format data.

use nalgebra::DMatrix;

use super::curve::{resolve_grid, Method, ProbabilityCurve};
use crate::data::{Episode, LongFormatData, TransitionSystem};
use crate::error::{Error, Result};

/// Intensity increments `dA_hj(u)` at ascending distinct times (0-based states).
#[derive(Debug, Clone, Default)]
pub(crate) struct Increments {
    pub times: Vec<f64>,
    pub incs: Vec<Vec<(usize, usize, f64)>>,
}

/// Per-state sorted entry/exit times for O(log n) at-risk counts.
pub(crate) struct RiskCounter {
    starts: Vec<Vec<f64>>,
    stops: Vec<Vec<f64>>,
    zero: Vec<Vec<f64>>,
}

impl RiskCounter {
    pub fn new(episodes: &[Episode], n_states: usize) -> RiskCounter {
        let mut rc = RiskCounter {
            starts: vec![Vec::new(); n_states],
            stops: vec![Vec::new(); n_states],
            zero: vec![Vec::new(); n_states],
        };
        for e in episodes {
            let h = e.state - 1;
            if e.start == e.stop {
                rc.zero[h].push(e.stop);
            } else {
                rc.starts[h].push(e.start);
                rc.stops[h].push(e.stop);
            }
        }
        for v in rc
            .starts
            .iter_mut()
            .chain(rc.stops.iter_mut())
            .chain(rc.zero.iter_mut())
        {
            v.sort_by(f64::total_cmp);
        }
        rc
    }

    /// Sojourns in state `h` (0-based) at risk at `u`: `start < u <= stop`,
    /// or zero-length sojourns ending at `u`.
    pub fn at_risk(&self, h: usize, u: f64) -> usize {
        let below = |v: &Vec<f64>| v.partition_point(|&x| x < u);
        let zero = &self.zero[h];
        let z = zero.partition_point(|&x| x <= u) - zero.partition_point(|&x| x < u);
        below(&self.starts[h]) - below(&self.stops[h]) + z
    }

    /// Last time anyone is at risk in `h`.
    pub fn last_time(&self, h: usize) -> Option<f64> {
        self.stops[h]
            .last()
            .copied()
            .into_iter()
            .chain(self.zero[h].last().copied())
            .reduce(f64::max)
    }
}

/// Nelson-Aalen increments `d_hj(u) / n_h(u)` at observed transition times `> after`.
pub(crate) fn nelson_aalen(episodes: &[Episode], n_states: usize, after: f64) -> Increments {
    let rc = RiskCounter::new(episodes, n_states);
    let mut events: Vec<(f64, usize, usize)> = episodes
        .iter()
        .filter(|e| e.stop > after)
        .filter_map(|e| e.exit.map(|j| (e.stop, e.state - 1, j - 1)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = Increments::default();
    let mut k = 0;
    while k < events.len() {
        let u = events[k].0;
        let mut at_u = Vec::new();
        while k < events.len() && events[k].0 == u {
            let (_, h, j) = events[k];
            let mut d = 0usize;
            while k < events.len() && events[k] == (u, h, j) {
                d += 1;
                k += 1;
            }
            at_u.push((h, j, d as f64 / rc.at_risk(h, u) as f64));
        }
        out.times.push(u);
        out.incs.push(at_u);
    }
    out
}

/// `P(s, t)` for each grid time as the product of `I + dA(u)` over `u` in `(s, t]`.
/// With `cap`, rows whose increments sum above 1 are rescaled to sum to 1;
/// the returned flag reports whether that happened.
pub(crate) fn product_integral(
    n_states: usize,
    inc: &Increments,
    s: f64,
    grid: &[f64],
    cap: bool,
) -> (Vec<DMatrix<f64>>, bool) {
    let mut p = DMatrix::<f64>::identity(n_states, n_states);
    let mut out = Vec::with_capacity(grid.len());
    let mut capped = false;
    let mut k = inc.times.partition_point(|&u| u <= s);
    let mut step = DMatrix::<f64>::identity(n_states, n_states);
    for &t in grid {
        while k < inc.times.len() && inc.times[k] <= t {
            step.fill_with_identity();
            let mut row_total = vec![0.0; n_states];
            for &(h, j, a) in &inc.incs[k] {
                step[(h, j)] += a;
                row_total[h] += a;
            }
            for (h, &total) in row_total.iter().enumerate() {
                if cap && total > 1.0 {
                    capped = true;
                    for j in 0..n_states {
                        if j != h {
                            step[(h, j)] /= total;
                        }
                    }
                    step[(h, h)] = 0.0;
                } else {
                    step[(h, h)] = 1.0 - total;
                }
            }
            p = &p * &step;
            k += 1;
        }
        out.push(p.clone());
    }
    (out, capped)
}

/// Curves for every `(h, j)` with `j = h` or `j` reachable from `h`.
pub(crate) fn matrix_curves(
    method: Method,
    sys: &TransitionSystem,
    s: f64,
    grid: &[f64],
    mats: &[DMatrix<f64>],
    rows: &[usize],
) -> Vec<ProbabilityCurve> {
    let reach = sys.reachability();
    let mut out = Vec::new();
    for &h in rows {
        for j in 1..=sys.n_states() {
            if j == h || reach[h - 1][j - 1] {
                let est: Vec<f64> = mats.iter().map(|m| m[(h - 1, j - 1)]).collect();
                out.push(ProbabilityCurve::new(method, s, h, j, grid, &est));
            }
        }
    }
    out
}

/// Flags rows whose probability mass sits in a non-absorbing state after its
/// last at-risk time, where estimates are only carried forward.
fn flag_exhausted(curves: &mut [ProbabilityCurve], sys: &TransitionSystem, rc: &RiskCounter) {
    for c in curves.iter_mut() {
        if sys.is_absorbing(c.to) {
            continue;
        }
        let last = rc.last_time(c.to - 1).unwrap_or(f64::NEG_INFINITY);
        if c.grid.iter().any(|g| g.t > last && g.est > 0.0) {
            c.flag("risk_set_exhausted");
        }
    }
    // Propagate to the whole row so each row is self-describing.
    let flagged: Vec<usize> = curves
        .iter()
        .filter(|c| c.flags.iter().any(|f| f == "risk_set_exhausted"))
        .map(|c| c.from)
        .collect();
    for c in curves.iter_mut() {
        if flagged.contains(&c.from) {
            c.flag("risk_set_exhausted");
        }
    }
}

fn transition_times(long: &LongFormatData) -> impl Iterator<Item = f64> + '_ {
    long.rows.iter().filter(|r| r.status).map(|r| r.tstop)
}

/// Aalen-Johansen estimates of the full matrix `P(s, t)`.
pub fn aalen_johansen(
    long: &LongFormatData,
    s: f64,
    grid: Option<&[f64]>,
) -> Result<Vec<ProbabilityCurve>> {
    let sys = &long.system;
    let grid = resolve_grid(grid, transition_times(long), s)?;
    let episodes = long.episodes();
    let inc = nelson_aalen(&episodes, sys.n_states(), s);
    let (mats, _) = product_integral(sys.n_states(), &inc, s, &grid, false);
    let rows: Vec<usize> = (1..=sys.n_states())
        .filter(|&h| !sys.is_absorbing(h))
        .collect();
    let mut curves = matrix_curves(Method::Aj, sys, s, &grid, &mats, &rows);
    flag_exhausted(
        &mut curves,
        sys,
        &RiskCounter::new(&episodes, sys.n_states()),
    );
    Ok(curves)
}

/// Subjects occupying `h` at time `s`.
pub(crate) fn occupants(long: &LongFormatData, h: usize, s: f64) -> Vec<usize> {
    let mut subjects: Vec<usize> = long
        .episodes()
        .iter()
        .filter(|e| e.state == h && e.occupies(s))
        .map(|e| e.subject)
        .collect();
    subjects.dedup();
    subjects
}

/// Aalen-Johansen on the subjects occupying `h` at `s`: the row `p_h.(s, t)`.
pub fn landmark_aalen_johansen(
    long: &LongFormatData,
    s: f64,
    h: usize,
    grid: Option<&[f64]>,
) -> Result<Vec<ProbabilityCurve>> {
    let sys = &long.system;
    if h == 0 || h > sys.n_states() {
        return Err(Error::InvalidParameter(format!(
            "state {h} is not in the system"
        )));
    }
    let grid = resolve_grid(grid, transition_times(long), s)?;
    let subjects = occupants(long, h, s);
    if subjects.is_empty() {
        return Err(Error::EmptyLandmarkSet { state: h, s });
    }
    let lm = long.landmark(&subjects, s);
    let episodes = lm.episodes();
    let inc = nelson_aalen(&episodes, sys.n_states(), s);
    let (mats, _) = product_integral(sys.n_states(), &inc, s, &grid, false);
    let mut curves = matrix_curves(Method::Lmaj, sys, s, &grid, &mats, &[h]);
    flag_exhausted(
        &mut curves,
        sys,
        &RiskCounter::new(&episodes, sys.n_states()),
    );
    Ok(curves)
}
