use serde::Serialize;

use crate::data::covariates::CovariateTable;
use crate::data::mapping::{ValidatedIdmData, ValidatedMsmData, WideRecord};
use crate::data::system::TransitionSystem;
use crate::error::{Error, Result};

/// One at-risk interval for one transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongRow {
    /// Index of the subject in the covariate table.
    #[serde(skip)]
    pub subject: usize,
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub trans: usize,
    pub tstart: f64,
    pub tstop: f64,
    pub duration: f64,
    pub status: bool,
}

/// Sojourn of one subject in one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Episode {
    pub subject: usize,
    pub state: usize,
    pub start: f64,
    pub stop: f64,
    /// State entered at `stop`, or `None` when censored there.
    pub exit: Option<usize>,
}

impl Episode {
    /// Membership of the risk set at time `u`. A zero-length sojourn is at
    /// risk only at its own exit time.
    pub fn at_risk(&self, u: f64) -> bool {
        (self.start < u && u <= self.stop) || (self.start == self.stop && u == self.stop)
    }

    /// State occupied at `s`, in the right-continuous sense.
    pub fn occupies(&self, s: f64) -> bool {
        self.start <= s && s < self.stop
    }
}

/// Stacked per-transition rows, grouped by subject.
#[derive(Debug, Clone, PartialEq)]
pub struct LongFormatData {
    pub rows: Vec<LongRow>,
    /// One row per subject.
    pub covariates: CovariateTable,
    pub ids: Vec<usize>,
    pub system: TransitionSystem,
}

impl LongFormatData {
    pub fn n_subjects(&self) -> usize {
        self.ids.len()
    }

    /// Rows of one transition number.
    pub fn transition_rows(&self, trans: usize) -> impl Iterator<Item = &LongRow> {
        self.rows.iter().filter(move |r| r.trans == trans)
    }

    /// Collapses rows into sojourns. Rows of one sojourn are adjacent.
    pub fn episodes(&self) -> Vec<Episode> {
        let mut out: Vec<Episode> = Vec::new();
        for r in &self.rows {
            let same = out.last().is_some_and(|e| {
                e.subject == r.subject && e.state == r.from && e.start == r.tstart
            });
            if !same {
                out.push(Episode {
                    subject: r.subject,
                    state: r.from,
                    start: r.tstart,
                    stop: r.tstop,
                    exit: None,
                });
            }
            if r.status {
                out.last_mut().unwrap().exit = Some(r.to);
            }
        }
        out
    }

    /// Subject-level resample; `subjects` may repeat and each copy becomes a new subject.
    pub fn resample(&self, subjects: &[usize]) -> LongFormatData {
        let mut by_subject: Vec<Vec<&LongRow>> = vec![Vec::new(); self.n_subjects()];
        for r in &self.rows {
            by_subject[r.subject].push(r);
        }
        let mut rows = Vec::with_capacity(self.rows.len());
        for (new, &old) in subjects.iter().enumerate() {
            for r in &by_subject[old] {
                rows.push(LongRow {
                    subject: new,
                    id: new + 1,
                    ..**r
                });
            }
        }
        LongFormatData {
            rows,
            covariates: self.covariates.select(subjects),
            ids: (1..=subjects.len()).collect(),
            system: self.system.clone(),
        }
    }

    /// Restriction to the given subjects and to sojourns still open after `s`.
    pub fn landmark(&self, subjects: &[usize], s: f64) -> LongFormatData {
        let mut data = self.resample(subjects);
        data.rows.retain(|r| r.tstop > s);
        data
    }
}

/// Follows one wide record through the transition system, emitting a row per
/// at-risk transition of every sojourn.
fn expand_record(
    rec: &WideRecord,
    sys: &TransitionSystem,
    priority: &[usize],
    subject: usize,
    id: usize,
    out: &mut Vec<LongRow>,
) -> Result<()> {
    let rank = |s: usize| priority.iter().position(|&p| p == s).unwrap_or(usize::MAX);
    let mut visited = vec![false; sys.n_states() + 1];
    let mut state = 1;
    let mut t0 = 0.0;
    visited[1] = true;
    loop {
        let targets = sys.targets(state);
        if targets.is_empty() {
            return Ok(());
        }
        let next = targets
            .iter()
            .copied()
            .filter(|&j| !visited[j] && rec.status[j - 1] && rec.times[j - 1] >= t0)
            .min_by(|&a, &b| {
                rec.times[a - 1]
                    .total_cmp(&rec.times[b - 1])
                    .then(rank(a).cmp(&rank(b)))
            });
        let stop = match next {
            Some(j) => rec.times[j - 1],
            None => {
                // Censored in `state`: an observed entry into some state left
                // unvisited after t0 cannot be explained by the schema.
                if let Some(j) = (2..=sys.n_states())
                    .find(|&j| !visited[j] && rec.status[j - 1] && rec.times[j - 1] > t0)
                {
                    return Err(Error::PathInconsistent {
                        subject: id,
                        from: state,
                        to: j,
                    });
                }
                targets.iter().map(|&j| rec.times[j - 1]).fold(t0, f64::max)
            }
        };
        for t in sys.outgoing(state) {
            out.push(LongRow {
                subject,
                id,
                from: state,
                to: t.to,
                trans: t.number,
                tstart: t0,
                tstop: stop,
                duration: stop - t0,
                status: Some(t.to) == next,
            });
        }
        match next {
            Some(j) => {
                visited[j] = true;
                state = j;
                t0 = stop;
            }
            None => return Ok(()),
        }
    }
}

fn expand(
    records: &[WideRecord],
    ids: &[usize],
    sys: &TransitionSystem,
    priority: &[usize],
    covariates: &CovariateTable,
) -> Result<LongFormatData> {
    let mut rows = Vec::with_capacity(records.len() * sys.n_transitions());
    for (i, rec) in records.iter().enumerate() {
        expand_record(rec, sys, priority, i, ids[i], &mut rows)?;
    }
    Ok(LongFormatData {
        rows,
        covariates: covariates.clone(),
        ids: ids.to_vec(),
        system: sys.clone(),
    })
}

/// Wide illness-death data to long format over the standard 3-state system.
pub fn idm_to_long(data: &ValidatedIdmData) -> Result<LongFormatData> {
    let sys = TransitionSystem::illness_death();
    expand(
        &data.to_wide(),
        &data.ids,
        &sys,
        &[1, 2, 3],
        &data.covariates,
    )
}

/// Wide multi-state data to long format.
pub fn msm_to_long(data: &ValidatedMsmData) -> Result<LongFormatData> {
    expand(
        &data.records,
        &data.ids,
        &data.system,
        &data.priority,
        &data.covariates,
    )
}

/// Observed transition counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountMatrix {
    pub labels: Vec<String>,
    /// `counts[h-1][j-1]`: observed `h -> j` transitions.
    pub counts: Vec<Vec<usize>>,
    /// Sojourns in each state that ended without an observed transition.
    pub no_event: Vec<usize>,
    /// Sojourns in each state.
    pub episodes: Vec<usize>,
    /// Row proportions; the last column is "no further event".
    pub proportions: Vec<Vec<f64>>,
}

pub fn count_transitions(long: &LongFormatData) -> CountMatrix {
    let n = long.system.n_states();
    let mut counts = vec![vec![0usize; n]; n];
    let mut no_event = vec![0usize; n];
    let mut episodes = vec![0usize; n];
    for e in long.episodes() {
        episodes[e.state - 1] += 1;
        match e.exit {
            Some(j) => counts[e.state - 1][j - 1] += 1,
            None => no_event[e.state - 1] += 1,
        }
    }
    let proportions = (0..n)
        .map(|h| {
            let total = episodes[h] as f64;
            counts[h]
                .iter()
                .chain(std::iter::once(&no_event[h]))
                .map(|&c| if total > 0.0 { c as f64 / total } else { 0.0 })
                .collect()
        })
        .collect();
    CountMatrix {
        labels: long.system.labels().to_vec(),
        counts,
        no_event,
        episodes,
        proportions,
    }
}
