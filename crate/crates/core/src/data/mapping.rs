use serde::{Deserialize, Serialize};

use crate::data::covariates::CovariateTable;
use crate::data::dataset::{Dataset, Value};
use crate::data::system::TransitionSystem;
use crate::error::{Error, Result};

/// Column roles for classical survival data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalMapping {
    pub time: String,
    pub status: String,
    #[serde(default)]
    pub covariates: Vec<String>,
}

/// Column roles for illness-death data: sojourn in the initial state,
/// recurrence indicator, total time and death indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdmMapping {
    pub time1: String,
    pub event1: String,
    pub stime: String,
    pub event: String,
    #[serde(default)]
    pub covariates: Vec<String>,
}

/// `(time, status)` columns recording entry into one non-initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateColumns {
    pub time: String,
    pub status: String,
}

/// Wide-format multi-state mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmMapping {
    pub system: TransitionSystem,
    /// One entry per state 2..=n, in state order.
    pub states: Vec<StateColumns>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub id: Option<String>,
    /// Order in which tied entry times are resolved (states, most preferred
    /// first). Defaults to declaration order.
    #[serde(default)]
    pub tie_priority: Option<Vec<usize>>,
}

/// Event history of one subject in wide form. Index `j - 1` holds state `j`;
/// the initial state's slot is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct WideRecord {
    pub times: Vec<f64>,
    pub status: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSurvivalData {
    pub time: Vec<f64>,
    pub status: Vec<bool>,
    /// Every non-role column of the source dataset, restricted to kept rows.
    pub covariates: CovariateTable,
    /// Model covariates declared in the mapping.
    pub model_covariates: Vec<String>,
    /// Source row (0-based) of each kept observation.
    pub source_rows: Vec<usize>,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedIdmData {
    pub time1: Vec<f64>,
    pub event1: Vec<bool>,
    pub stime: Vec<f64>,
    pub event: Vec<bool>,
    pub ids: Vec<usize>,
    pub covariates: CovariateTable,
    pub model_covariates: Vec<String>,
    pub source_rows: Vec<usize>,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedMsmData {
    pub system: TransitionSystem,
    pub records: Vec<WideRecord>,
    pub ids: Vec<usize>,
    pub covariates: CovariateTable,
    pub model_covariates: Vec<String>,
    pub priority: Vec<usize>,
    pub source_rows: Vec<usize>,
    pub dropped: usize,
}

/// Rows kept after dropping those with a missing value in any role column.
fn complete_role_rows(d: &Dataset, roles: &[&str]) -> Result<Vec<usize>> {
    let idx = roles
        .iter()
        .map(|r| d.column_index(r))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..d.n_rows())
        .filter(|&r| idx.iter().all(|&c| !d.rows()[r][c].is_missing()))
        .collect())
}

fn time_column(d: &Dataset, name: &str, rows: &[usize]) -> Result<Vec<f64>> {
    let v = d.numeric(name)?;
    rows.iter()
        .map(|&r| {
            let t = v[r].expect("complete row");
            if t < 0.0 || t.is_nan() {
                Err(Error::NegativeTime {
                    column: name.to_string(),
                    row: r + 1,
                })
            } else {
                Ok(t)
            }
        })
        .collect()
}

fn status_column(d: &Dataset, name: &str, rows: &[usize]) -> Result<Vec<bool>> {
    let c = d.column_index(name)?;
    rows.iter()
        .map(|&r| match &d.rows()[r][c] {
            Value::Number(x) if *x == 0.0 => Ok(false),
            Value::Number(x) if *x == 1.0 => Ok(true),
            other => Err(Error::NonBinaryStatus {
                column: name.to_string(),
                row: r + 1,
                value: other.render(),
            }),
        })
        .collect()
}

fn other_columns(d: &Dataset, roles: &[&str]) -> Vec<String> {
    d.columns()
        .iter()
        .map(|c| c.name.clone())
        .filter(|n| !roles.contains(&n.as_str()))
        .collect()
}

fn check_covariates(d: &Dataset, names: &[String]) -> Result<()> {
    for n in names {
        d.column_index(n)?;
    }
    Ok(())
}

/// Validates a survival mapping; rows missing time or status are dropped.
pub fn bind_survival(d: &Dataset, m: &SurvivalMapping) -> Result<ValidatedSurvivalData> {
    let roles = [m.time.as_str(), m.status.as_str()];
    check_covariates(d, &m.covariates)?;
    let rows = complete_role_rows(d, &roles)?;
    let time = time_column(d, &m.time, &rows)?;
    let status = status_column(d, &m.status, &rows)?;
    let covariates = CovariateTable::from_dataset(d, &other_columns(d, &roles), &rows)?;
    Ok(ValidatedSurvivalData {
        time,
        status,
        covariates,
        model_covariates: m.covariates.clone(),
        dropped: d.n_rows() - rows.len(),
        source_rows: rows,
    })
}

/// Validates illness-death data: `time1 <= stime`, and a subject never seen in
/// the intermediate state must have `time1 == stime`.
pub fn bind_idm(d: &Dataset, m: &IdmMapping) -> Result<ValidatedIdmData> {
    let roles = [
        m.time1.as_str(),
        m.event1.as_str(),
        m.stime.as_str(),
        m.event.as_str(),
    ];
    check_covariates(d, &m.covariates)?;
    let rows = complete_role_rows(d, &roles)?;
    let time1 = time_column(d, &m.time1, &rows)?;
    let stime = time_column(d, &m.stime, &rows)?;
    let event1 = status_column(d, &m.event1, &rows)?;
    let event = status_column(d, &m.event, &rows)?;
    let bad: Vec<usize> = (0..rows.len())
        .filter(|&i| time1[i] > stime[i] || (!event1[i] && time1[i] != stime[i]))
        .map(|i| rows[i] + 1)
        .collect();
    if !bad.is_empty() {
        return Err(Error::InconsistentTimes { rows: bad });
    }
    let covariates = CovariateTable::from_dataset(d, &other_columns(d, &roles), &rows)?;
    Ok(ValidatedIdmData {
        time1,
        event1,
        stime,
        event,
        ids: rows.iter().map(|r| r + 1).collect(),
        covariates,
        model_covariates: m.covariates.clone(),
        dropped: d.n_rows() - rows.len(),
        source_rows: rows,
    })
}

/// Validates wide multi-state data against its transition system.
pub fn bind_msm(d: &Dataset, m: &MsmMapping) -> Result<ValidatedMsmData> {
    let sys = &m.system;
    let n = sys.n_states();
    if m.states.len() != n - 1 {
        return Err(Error::InvalidSystem(format!(
            "{} (time, status) pairs given for {} non-initial states",
            m.states.len(),
            n - 1
        )));
    }
    let priority = match &m.tie_priority {
        Some(p) => {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            if sorted != (1..=n).collect::<Vec<_>>() && sorted != (2..=n).collect::<Vec<_>>() {
                return Err(Error::InvalidParameter(
                    "tie_priority must list every state once".into(),
                ));
            }
            p.clone()
        }
        None => (1..=n).collect(),
    };
    let mut roles: Vec<&str> = Vec::new();
    for s in &m.states {
        roles.push(&s.time);
        roles.push(&s.status);
    }
    check_covariates(d, &m.covariates)?;
    let rows = complete_role_rows(d, &roles)?;
    let mut times = Vec::with_capacity(n - 1);
    let mut statuses = Vec::with_capacity(n - 1);
    for s in &m.states {
        times.push(time_column(d, &s.time, &rows)?);
        statuses.push(status_column(d, &s.status, &rows)?);
    }
    let ids = match &m.id {
        Some(col) => {
            let v = d.numeric(col)?;
            rows.iter()
                .map(|&r| {
                    v[r].filter(|x| *x >= 0.0 && x.fract() == 0.0)
                        .map(|x| x as usize)
                        .ok_or_else(|| {
                            Error::InvalidParameter(format!("id column `{col}` row {}", r + 1))
                        })
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => rows.iter().map(|r| r + 1).collect(),
    };
    let records: Vec<WideRecord> = (0..rows.len())
        .map(|i| {
            let mut t = vec![0.0; n];
            let mut st = vec![false; n];
            for j in 1..n {
                t[j] = times[j - 1][i];
                st[j] = statuses[j - 1][i];
            }
            WideRecord {
                times: t,
                status: st,
            }
        })
        .collect();

    // An observed entry into a state cannot postdate entry into a state that
    // can only be reached through it.
    let reach = sys.reachability();
    let mut bad = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let inconsistent = (1..n).any(|j| {
            rec.status[j]
                && (1..n).any(|k| reach[j][k] && !reach[k][j] && rec.times[k] < rec.times[j])
        });
        if inconsistent {
            bad.push(rows[i] + 1);
        }
    }
    if !bad.is_empty() {
        return Err(Error::InconsistentTimes { rows: bad });
    }

    let role_names: Vec<&str> = roles.iter().copied().chain(m.id.as_deref()).collect();
    let covariates = CovariateTable::from_dataset(d, &other_columns(d, &role_names), &rows)?;
    Ok(ValidatedMsmData {
        system: sys.clone(),
        records,
        ids,
        covariates,
        model_covariates: m.covariates.clone(),
        priority,
        dropped: d.n_rows() - rows.len(),
        source_rows: rows,
    })
}

impl ValidatedSurvivalData {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.status.iter().filter(|&&s| s).count()
    }

    /// Observation subset; indices may repeat.
    pub fn select(&self, rows: &[usize]) -> ValidatedSurvivalData {
        ValidatedSurvivalData {
            time: rows.iter().map(|&r| self.time[r]).collect(),
            status: rows.iter().map(|&r| self.status[r]).collect(),
            covariates: self.covariates.select(rows),
            model_covariates: self.model_covariates.clone(),
            source_rows: rows.iter().map(|&r| self.source_rows[r]).collect(),
            dropped: 0,
        }
    }

    pub fn from_vectors(
        time: Vec<f64>,
        status: Vec<bool>,
        covariates: CovariateTable,
    ) -> ValidatedSurvivalData {
        let n = time.len();
        ValidatedSurvivalData {
            time,
            status,
            model_covariates: covariates.names(),
            covariates,
            source_rows: (0..n).collect(),
            dropped: 0,
        }
    }
}

impl ValidatedIdmData {
    pub fn len(&self) -> usize {
        self.time1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time1.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> ValidatedIdmData {
        ValidatedIdmData {
            time1: rows.iter().map(|&r| self.time1[r]).collect(),
            event1: rows.iter().map(|&r| self.event1[r]).collect(),
            stime: rows.iter().map(|&r| self.stime[r]).collect(),
            event: rows.iter().map(|&r| self.event[r]).collect(),
            ids: (1..=rows.len()).collect(),
            covariates: self.covariates.select(rows),
            model_covariates: self.model_covariates.clone(),
            source_rows: rows.iter().map(|&r| self.source_rows[r]).collect(),
            dropped: 0,
        }
    }

    /// Builds validated data directly from vectors, checking the same invariants as [`bind_idm`].
    pub fn from_vectors(
        time1: Vec<f64>,
        event1: Vec<bool>,
        stime: Vec<f64>,
        event: Vec<bool>,
        covariates: CovariateTable,
    ) -> Result<ValidatedIdmData> {
        let n = time1.len();
        if event1.len() != n || stime.len() != n || event.len() != n || covariates.len() != n {
            return Err(Error::InvalidParameter("vectors differ in length".into()));
        }
        let bad: Vec<usize> = (0..n)
            .filter(|&i| {
                time1[i] < 0.0 || time1[i] > stime[i] || (!event1[i] && time1[i] != stime[i])
            })
            .map(|i| i + 1)
            .collect();
        if !bad.is_empty() {
            return Err(Error::InconsistentTimes { rows: bad });
        }
        Ok(ValidatedIdmData {
            time1,
            event1,
            stime,
            event,
            ids: (1..=n).collect(),
            model_covariates: covariates.names(),
            covariates,
            source_rows: (0..n).collect(),
            dropped: 0,
        })
    }

    /// The same histories as generic wide records over the illness-death system.
    pub fn to_wide(&self) -> Vec<WideRecord> {
        (0..self.len())
            .map(|i| WideRecord {
                times: vec![0.0, self.time1[i], self.stime[i]],
                status: vec![false, self.event1[i], self.event[i]],
            })
            .collect()
    }
}

impl ValidatedMsmData {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> ValidatedMsmData {
        ValidatedMsmData {
            system: self.system.clone(),
            records: rows.iter().map(|&r| self.records[r].clone()).collect(),
            ids: (1..=rows.len()).collect(),
            covariates: self.covariates.select(rows),
            model_covariates: self.model_covariates.clone(),
            priority: self.priority.clone(),
            source_rows: rows.iter().map(|&r| self.source_rows[r]).collect(),
            dropped: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::parse_csv;

    fn idm_map() -> IdmMapping {
        IdmMapping {
            time1: "time1".into(),
            event1: "event1".into(),
            stime: "Stime".into(),
            event: "event".into(),
            covariates: vec![],
        }
    }

    #[test]
    fn survival_binding_drops_missing_time() {
        let d = parse_csv(b"time,status,x\n1,1,a\nNA,0,b\n3,0,a\n", None).unwrap();
        let m = SurvivalMapping {
            time: "time".into(),
            status: "status".into(),
            covariates: vec!["x".into()],
        };
        let v = bind_survival(&d, &m).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.dropped, 1);
        assert_eq!(v.covariates.names(), vec!["x".to_string()]);
    }

    #[test]
    fn survival_binding_errors() {
        let d = parse_csv(b"time,status\n1,2\n", None).unwrap();
        let m = SurvivalMapping {
            time: "time".into(),
            status: "status".into(),
            covariates: vec![],
        };
        assert!(matches!(
            bind_survival(&d, &m),
            Err(Error::NonBinaryStatus { row: 1, .. })
        ));
        let d = parse_csv(b"time,status\n-1,1\n", None).unwrap();
        assert!(matches!(
            bind_survival(&d, &m),
            Err(Error::NegativeTime { .. })
        ));
        let m2 = SurvivalMapping {
            time: "t".into(),
            ..m
        };
        assert_eq!(
            bind_survival(&d, &m2),
            Err(Error::MissingColumn("t".into()))
        );
    }

    #[test]
    fn idm_time_order_enforced() {
        let d = parse_csv(b"time1,event1,Stime,event\n10,1,5,1\n3,0,3,1\n", None).unwrap();
        assert_eq!(
            bind_idm(&d, &idm_map()),
            Err(Error::InconsistentTimes { rows: vec![1] })
        );
    }

    #[test]
    fn idm_unentered_intermediate_state_needs_equal_times() {
        let d = parse_csv(b"time1,event1,Stime,event\n4,0,9,1\n", None).unwrap();
        assert_eq!(
            bind_idm(&d, &idm_map()),
            Err(Error::InconsistentTimes { rows: vec![1] })
        );
    }
}
