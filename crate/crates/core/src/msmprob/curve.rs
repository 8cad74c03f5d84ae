use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Aj,
    Lm,
    Plm,
    Lmaj,
    Ipcw,
    Breslow,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Aj,
        Method::Lm,
        Method::Plm,
        Method::Lmaj,
        Method::Ipcw,
        Method::Breslow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Aj => "aj",
            Method::Lm => "lm",
            Method::Plm => "plm",
            Method::Lmaj => "lmaj",
            Method::Ipcw => "ipcw",
            Method::Breslow => "breslow",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}`")))
    }
}

/// Time origin of per-transition intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Study time, `(Tstart, Tstop]`.
    #[default]
    Markov,
    /// Duration in the current state, `(0, Tstop - Tstart]`.
    SemiMarkov,
}

impl std::str::FromStr for ClockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov" | "forward" => Ok(ClockMode::Markov),
            "semi_markov" | "semi-markov" | "reset" => Ok(ClockMode::SemiMarkov),
            other => Err(Error::InvalidParameter(format!("unknown clock `{other}`"))),
        }
    }
}

/// Conditioning applied to an estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Conditioning {
    Profile {
        values: BTreeMap<String, String>,
    },
    Level {
        covariate: String,
        level: String,
    },
    Continuous {
        covariate: String,
        value: f64,
        bandwidth: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub t: f64,
    /// Missing (`null` in JSON) when not estimable.
    pub est: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Estimates of `p_hj(s, t)` over a time grid; states are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityCurve {
    pub method: Method,
    pub s: f64,
    pub from: usize,
    pub to: usize,
    pub grid: Vec<GridPoint>,
    pub n_boot: usize,
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<Conditioning>,
}

impl ProbabilityCurve {
    pub(crate) fn new(
        method: Method,
        s: f64,
        from: usize,
        to: usize,
        grid: &[f64],
        est: &[f64],
    ) -> ProbabilityCurve {
        ProbabilityCurve {
            method,
            s,
            from,
            to,
            grid: grid
                .iter()
                .zip(est)
                .map(|(&t, &e)| GridPoint {
                    t,
                    est: e,
                    lower: None,
                    upper: None,
                })
                .collect(),
            n_boot: 0,
            flags: Vec::new(),
            conditioning: None,
        }
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.grid.iter().map(|g| g.est).collect()
    }

    pub fn flag(&mut self, f: &str) {
        if !self.flags.iter().any(|x| x == f) {
            self.flags.push(f.to_string());
        }
    }
}

/// Cumulative incidence of entering the intermediate state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CifCurve {
    pub grid: Vec<GridPoint>,
    pub n_boot: usize,
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<Conditioning>,
}

/// Anything holding one or more estimate grids that bootstrap can fill.
pub trait Curves: Sized {
    fn grids(&self) -> Vec<&Vec<GridPoint>>;
    fn grids_mut(&mut self) -> Vec<&mut Vec<GridPoint>>;
    fn set_n_boot(&mut self, n: usize);
    fn add_flag(&mut self, flag: &str);
}

impl Curves for Vec<ProbabilityCurve> {
    fn grids(&self) -> Vec<&Vec<GridPoint>> {
        self.iter().map(|c| &c.grid).collect()
    }
    fn grids_mut(&mut self) -> Vec<&mut Vec<GridPoint>> {
        self.iter_mut().map(|c| &mut c.grid).collect()
    }
    fn set_n_boot(&mut self, n: usize) {
        self.iter_mut().for_each(|c| c.n_boot = n);
    }
    fn add_flag(&mut self, flag: &str) {
        self.iter_mut().for_each(|c| c.flag(flag));
    }
}

impl Curves for CifCurve {
    fn grids(&self) -> Vec<&Vec<GridPoint>> {
        vec![&self.grid]
    }
    fn grids_mut(&mut self) -> Vec<&mut Vec<GridPoint>> {
        vec![&mut self.grid]
    }
    fn set_n_boot(&mut self, n: usize) {
        self.n_boot = n;
    }
    fn add_flag(&mut self, flag: &str) {
        if !self.flags.iter().any(|x| x == flag) {
            self.flags.push(flag.to_string());
        }
    }
}

/// Evaluation grid: explicit times (sorted, each `>= s`) or, by default, the
/// distinct event times in `(s, max]`. Empty defaults fall back to `[s]`.
pub fn resolve_grid(
    explicit: Option<&[f64]>,
    event_times: impl IntoIterator<Item = f64>,
    s: f64,
) -> Result<Vec<f64>> {
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "landmark time s = {s} must be non-negative"
        )));
    }
    let grid = match explicit {
        Some(g) => {
            if g.is_empty() {
                return Err(Error::InvalidParameter("grid is empty".into()));
            }
            if let Some(&t) = g.iter().find(|&&t| !(t >= s) || !t.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "grid time {t} is before s = {s}"
                )));
            }
            crate::stats::unique_sorted(g.iter().copied())
        }
        None => {
            let g = crate::stats::unique_sorted(event_times.into_iter().filter(|&t| t > s));
            if g.is_empty() {
                vec![s]
            } else {
                g
            }
        }
    };
    Ok(grid)
}
