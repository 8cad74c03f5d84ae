//! Named analyses over bound datasets, with JSON parameters in and JSON
//! results out. Both the command line and the HTTP service go through
//! [`bind`] and [`run`], so identical inputs give identical output.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{
    bind_idm, bind_msm, bind_survival, count_transitions, idm_to_long, msm_to_long, Dataset,
    IdmMapping, LongFormatData, MsmMapping, SurvivalMapping, SystemSpec, TransitionSystem,
    ValidatedIdmData, ValidatedMsmData, ValidatedSurvivalData,
};
use crate::error::{Error, Result};
use crate::markovcheck::{self, MarkovData};
use crate::msmprob::{
    self, BootstrapOptions, CifConditioning, ClockMode, Method, ProbabilityCurve,
};
use crate::regression::cox::{term_groups, SurvFrame};
use crate::regression::{self, Distribution, Ties, TimeTransform};
use crate::survival::{self, ConfType};

/// Data model of a mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Survival,
    Idm,
    Msm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Survival => "survival",
            ModelKind::Idm => "idm",
            ModelKind::Msm => "msm",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "survival" => Ok(ModelKind::Survival),
            "idm" => Ok(ModelKind::Idm),
            "msm" => Ok(ModelKind::Msm),
            other => Err(Error::InvalidParameter(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Column-role mapping of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mapping {
    Survival(SurvivalMapping),
    Idm(IdmMapping),
    Msm(MsmMapping),
}

impl Mapping {
    /// Parses a mapping, reporting schema problems (self transitions,
    /// duplicate edges) with their own error codes.
    pub fn from_json(v: Value) -> Result<Mapping> {
        if let Some(sys) = v.get("system") {
            let spec: SystemSpec = parse(sys.clone())?;
            TransitionSystem::try_from(spec)?;
        }
        parse(v)
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Mapping::Survival(_) => ModelKind::Survival,
            Mapping::Idm(_) => ModelKind::Idm,
            Mapping::Msm(_) => ModelKind::Msm,
        }
    }
}

/// Validated data ready for analysis.
#[derive(Debug, Clone)]
pub enum Bound {
    Survival(ValidatedSurvivalData),
    Idm {
        data: ValidatedIdmData,
        long: LongFormatData,
    },
    Msm {
        data: ValidatedMsmData,
        long: LongFormatData,
    },
}

impl Bound {
    pub fn kind(&self) -> ModelKind {
        match self {
            Bound::Survival(_) => ModelKind::Survival,
            Bound::Idm { .. } => ModelKind::Idm,
            Bound::Msm { .. } => ModelKind::Msm,
        }
    }

    fn long(&self) -> Option<&LongFormatData> {
        match self {
            Bound::Survival(_) => None,
            Bound::Idm { long, .. } | Bound::Msm { long, .. } => Some(long),
        }
    }

    fn model_covariates(&self) -> &[String] {
        match self {
            Bound::Survival(d) => &d.model_covariates,
            Bound::Idm { data, .. } => &data.model_covariates,
            Bound::Msm { data, .. } => &data.model_covariates,
        }
    }
}

/// Outcome of validating a mapping against a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BindReport {
    pub kind: ModelKind,
    pub n_rows: usize,
    pub n_used: usize,
    pub dropped: usize,
    /// 1-based source rows dropped for missing role values.
    pub dropped_rows: Vec<usize>,
    pub warnings: Vec<String>,
}

pub fn bind(dataset: &Dataset, mapping: &Mapping) -> Result<(Bound, BindReport)> {
    let (bound, used) = match mapping {
        Mapping::Survival(m) => {
            let d = bind_survival(dataset, m)?;
            let used = d.source_rows.clone();
            (Bound::Survival(d), used)
        }
        Mapping::Idm(m) => {
            let data = bind_idm(dataset, m)?;
            let long = idm_to_long(&data)?;
            let used = data.source_rows.clone();
            (Bound::Idm { data, long }, used)
        }
        Mapping::Msm(m) => {
            let data = bind_msm(dataset, m)?;
            let long = msm_to_long(&data)?;
            let used = data.source_rows.clone();
            (Bound::Msm { data, long }, used)
        }
    };
    let mut keep = vec![false; dataset.n_rows()];
    for &r in &used {
        keep[r] = true;
    }
    let dropped_rows: Vec<usize> = (0..dataset.n_rows())
        .filter(|&r| !keep[r])
        .map(|r| r + 1)
        .collect();
    let mut warnings = Vec::new();
    if !dropped_rows.is_empty() {
        warnings.push(format!(
            "{} rows dropped for missing values",
            dropped_rows.len()
        ));
    }
    if let Some(long) = bound.long() {
        warnings.extend(long.system.warnings());
    }
    if used.is_empty() {
        warnings.push("no usable rows".to_string());
    }
    let report = BindReport {
        kind: mapping.kind(),
        n_rows: dataset.n_rows(),
        n_used: used.len(),
        dropped: dropped_rows.len(),
        dropped_rows,
        warnings,
    };
    Ok((bound, report))
}

/// The analyses offered over bound data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnalysisKind {
    Km,
    RankTest,
    Cox,
    PhTest,
    Anova,
    Aft,
    Counts,
    MsmReg,
    TransProb,
    Cif,
    MarkovLocal,
    MarkovGlobal,
}

impl AnalysisKind {
    pub const ALL: [AnalysisKind; 12] = [
        AnalysisKind::Km,
        AnalysisKind::RankTest,
        AnalysisKind::Cox,
        AnalysisKind::PhTest,
        AnalysisKind::Anova,
        AnalysisKind::Aft,
        AnalysisKind::Counts,
        AnalysisKind::MsmReg,
        AnalysisKind::TransProb,
        AnalysisKind::Cif,
        AnalysisKind::MarkovLocal,
        AnalysisKind::MarkovGlobal,
    ];

    /// Command name, also used in result bodies.
    pub fn name(self) -> &'static str {
        match self {
            AnalysisKind::Km => "km",
            AnalysisKind::RankTest => "ranktest",
            AnalysisKind::Cox => "cox",
            AnalysisKind::PhTest => "phtest",
            AnalysisKind::Anova => "anova",
            AnalysisKind::Aft => "aft",
            AnalysisKind::Counts => "counts",
            AnalysisKind::MsmReg => "msmreg",
            AnalysisKind::TransProb => "transprob",
            AnalysisKind::Cif => "cif",
            AnalysisKind::MarkovLocal => "markov-local",
            AnalysisKind::MarkovGlobal => "markov-global",
        }
    }

    /// URL path segment below a session.
    pub fn endpoint(self) -> &'static str {
        match self {
            AnalysisKind::MarkovLocal => "markov/local",
            AnalysisKind::MarkovGlobal => "markov/global",
            other => other.name(),
        }
    }

    pub fn accepts(self, kind: ModelKind) -> bool {
        use AnalysisKind::*;
        match self {
            Km | RankTest | Aft => kind == ModelKind::Survival,
            Cox | PhTest | Anova => true,
            Cif => kind == ModelKind::Idm,
            Counts | MsmReg | TransProb | MarkovLocal | MarkovGlobal => kind != ModelKind::Survival,
        }
    }
}

impl FromStr for AnalysisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnalysisKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.endpoint() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown analysis `{s}`")))
    }
}

impl fmt::Display for AnalysisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Runs `kind` on `bound`. A `seed` key in `params` overrides the fallback
/// `seed`; analyses that do not resample ignore it. The result echoes every
/// effective parameter.
pub fn run(kind: AnalysisKind, bound: &Bound, params: &Value, seed: u64) -> Result<Value> {
    if !kind.accepts(bound.kind()) {
        return Err(Error::IncompatibleMapping {
            analysis: kind.name().to_string(),
            kind: bound.kind().name().to_string(),
        });
    }
    let mut params = match params {
        Value::Null => serde_json::Map::new(),
        Value::Object(m) => m.clone(),
        _ => {
            return Err(Error::InvalidParameter(
                "parameters must be a JSON object".into(),
            ))
        }
    };
    let seed = match params.remove("seed") {
        None | Some(Value::Null) => seed,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::InvalidParameter("seed must be a non-negative integer".into()))?,
    };
    let params = Value::Object(params);
    let (effective, result) = match kind {
        AnalysisKind::Km => km(bound, parse(params)?)?,
        AnalysisKind::RankTest => ranktest(bound, parse(params)?)?,
        AnalysisKind::Cox => cox(bound, parse(params)?)?,
        AnalysisKind::PhTest => phtest(bound, parse(params)?)?,
        AnalysisKind::Anova => anova(bound, parse(params)?)?,
        AnalysisKind::Aft => aft(bound, parse(params)?)?,
        AnalysisKind::Counts => counts(bound, parse(params)?)?,
        AnalysisKind::MsmReg => msmreg(bound, parse(params)?)?,
        AnalysisKind::TransProb => transprob(bound, parse(params)?, seed)?,
        AnalysisKind::Cif => cif(bound, parse(params)?, seed)?,
        AnalysisKind::MarkovLocal => markov_local(bound, parse(params)?, seed)?,
        AnalysisKind::MarkovGlobal => markov_global(bound, parse(params)?, seed)?,
    };
    Ok(json!({"analysis": kind.name(), "params": effective, "result": result}))
}

fn parse<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn inline_error(e: &Error) -> Value {
    json!({"error": e.code(), "message": e.to_string()})
}

fn survival_data(bound: &Bound) -> &ValidatedSurvivalData {
    match bound {
        Bound::Survival(d) => d,
        _ => unreachable!("checked by AnalysisKind::accepts"),
    }
}

fn idm_data(bound: &Bound) -> Result<&ValidatedIdmData> {
    match bound {
        Bound::Idm { data, .. } => Ok(data),
        other => Err(Error::IncompatibleMapping {
            analysis: "illness-death estimator".into(),
            kind: other.kind().name().into(),
        }),
    }
}

fn conf_level_ok(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(
            "conf_level must be in (0, 1)".into(),
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KmParams {
    #[serde(default)]
    group_by: Option<String>,
    #[serde(default = "default_conf")]
    conf_level: f64,
    #[serde(default)]
    conf_type: ConfType,
}

fn default_conf() -> f64 {
    0.95
}

fn km(bound: &Bound, p: KmParams) -> Result<(Value, Value)> {
    let curves = survival::kaplan_meier(
        survival_data(bound),
        p.group_by.as_deref(),
        p.conf_level,
        p.conf_type,
    )?;
    Ok((to_json(&p), json!({ "curves": curves })))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankParams {
    #[serde(alias = "group_by")]
    group: String,
    #[serde(default)]
    rho: f64,
}

fn ranktest(bound: &Bound, p: RankParams) -> Result<(Value, Value)> {
    let r = survival::rank_test(survival_data(bound), &p.group, p.rho)?;
    Ok((to_json(&p), to_json(&r)))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoxParams {
    #[serde(default)]
    covariates: Option<Vec<String>>,
    #[serde(default)]
    ties: Ties,
    /// Transition `[from, to]`; required for multi-state data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transition: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clock: Option<ClockMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transform: Option<TimeTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nonlinearity: Option<Vec<String>>,
}

impl CoxParams {
    /// Fills defaults and returns the model frame.
    fn frame(&mut self, bound: &Bound) -> Result<SurvFrame> {
        if self.covariates.is_none() {
            self.covariates = Some(bound.model_covariates().to_vec());
        }
        match bound {
            Bound::Survival(d) => {
                if self.transition.is_some() || self.clock.is_some() {
                    return Err(Error::InvalidParameter(
                        "transition and clock apply to multi-state data only".into(),
                    ));
                }
                Ok(SurvFrame::from(d))
            }
            Bound::Idm { long, .. } | Bound::Msm { long, .. } => {
                let [from, to] = self.transition.ok_or_else(|| {
                    Error::InvalidParameter("transition [from, to] is required".into())
                })?;
                let trans = long.system.number(from, to).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "{from} -> {to} is not a transition of the system"
                    ))
                })?;
                let clock = *self.clock.get_or_insert(ClockMode::Markov);
                Ok(msmprob::transition_frame(long, trans, clock))
            }
        }
    }

    fn terms(&self) -> &[String] {
        self.covariates.as_deref().unwrap_or(&[])
    }
}

fn cox(bound: &Bound, mut p: CoxParams) -> Result<(Value, Value)> {
    if p.transform.is_some() || p.nonlinearity.is_some() {
        return Err(Error::InvalidParameter("unknown parameter for cox".into()));
    }
    let frame = p.frame(bound)?;
    let (data, _) = frame.cox_data(p.terms(), None)?;
    let fit = regression::fit_cox(&data, p.ties)?;
    Ok((to_json(&p), to_json(&fit)))
}

fn phtest(bound: &Bound, mut p: CoxParams) -> Result<(Value, Value)> {
    if p.nonlinearity.is_some() {
        return Err(Error::InvalidParameter(
            "unknown parameter for phtest".into(),
        ));
    }
    let transform = *p.transform.get_or_insert(TimeTransform::Km);
    let frame = p.frame(bound)?;
    let (data, design) = frame.cox_data(p.terms(), None)?;
    let fit = regression::fit_cox(&data, p.ties)?;
    let test = regression::ph_test(&data, &fit, &term_groups(&design), transform)?;
    Ok((to_json(&p), json!({"fit": fit, "test": test})))
}

fn anova(bound: &Bound, mut p: CoxParams) -> Result<(Value, Value)> {
    if p.transform.is_some() {
        return Err(Error::InvalidParameter(
            "unknown parameter for anova".into(),
        ));
    }
    let frame = p.frame(bound)?;
    let terms = p.terms().to_vec();
    let table = regression::anova_sequential(&frame, &terms, p.ties, None)?;
    // Default: every numeric term.
    let nonlin = p
        .nonlinearity
        .get_or_insert_with(|| {
            terms
                .iter()
                .filter(|t| {
                    frame
                        .covariates
                        .get(t)
                        .map(|c| c.is_numeric())
                        .unwrap_or(false)
                })
                .cloned()
                .collect()
        })
        .clone();
    let tests: Vec<Value> = nonlin
        .iter()
        .map(|c| {
            let adjust: Vec<String> = terms.iter().filter(|t| *t != c).cloned().collect();
            match regression::nonlinearity_test(&frame, c, &adjust, p.ties, None) {
                Ok(r) => to_json(&r),
                Err(e) => {
                    let mut v = inline_error(&e);
                    v["covariate"] = json!(c);
                    v
                }
            }
        })
        .collect();
    Ok((to_json(&p), json!({"table": table, "nonlinearity": tests})))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AftParams {
    #[serde(default)]
    covariates: Option<Vec<String>>,
    #[serde(default)]
    distributions: Option<Vec<Distribution>>,
}

fn aft(bound: &Bound, mut p: AftParams) -> Result<(Value, Value)> {
    let d = survival_data(bound);
    let covs = p
        .covariates
        .get_or_insert_with(|| d.model_covariates.clone())
        .clone();
    let dists = p
        .distributions
        .get_or_insert_with(|| Distribution::ALL.to_vec())
        .clone();
    if dists.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one distribution is required".into(),
        ));
    }
    let mut best: Option<(f64, Distribution)> = None;
    let mut fits = Vec::new();
    let mut validation: Option<Error> = None;
    for &dist in &dists {
        match regression::fit_aft(d, &covs, dist) {
            Ok(f) => {
                if f.aic.is_finite() && best.is_none_or(|(a, _)| f.aic < a) {
                    best = Some((f.aic, dist));
                }
                fits.push(to_json(&f));
            }
            Err(e) if e.is_validation() => validation = Some(e),
            Err(e) => {
                let mut v = inline_error(&e);
                v["distribution"] = json!(dist.name());
                fits.push(v);
            }
        }
    }
    if let Some(e) = validation {
        return Err(e);
    }
    let best = best.map(|(_, d)| d.name());
    Ok((to_json(&p), json!({"fits": fits, "best": best})))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountParams {
    /// State number displayed for the initial state (0 or 1).
    #[serde(default = "one")]
    display_base: usize,
}

fn one() -> usize {
    1
}

fn counts(bound: &Bound, p: CountParams) -> Result<(Value, Value)> {
    if p.display_base > 1 {
        return Err(Error::InvalidParameter(
            "display_base must be 0 or 1".into(),
        ));
    }
    let long = bound.long().expect("multi-state data");
    let m = count_transitions(long);
    let transitions: Vec<Value> = long
        .system
        .transitions()
        .iter()
        .map(|t| {
            json!({
                "number": t.number,
                "from": t.from,
                "to": t.to,
                "code": long.system.display_code(t.from, t.to, p.display_base),
                "count": m.counts[t.from - 1][t.to - 1],
            })
        })
        .collect();
    Ok((
        to_json(&p),
        json!({"matrix": m, "transitions": transitions}),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MsmRegParams {
    #[serde(default)]
    covariates: Option<Vec<String>>,
    #[serde(default)]
    clock: ClockMode,
    #[serde(default)]
    ties: Ties,
}

fn msmreg(bound: &Bound, mut p: MsmRegParams) -> Result<(Value, Value)> {
    let covs = p
        .covariates
        .get_or_insert_with(|| bound.model_covariates().to_vec())
        .clone();
    let fits = msmprob::per_transition_cox(
        bound.long().expect("multi-state data"),
        &covs,
        p.clock,
        p.ties,
    )?;
    Ok((to_json(&p), json!({ "transitions": fits })))
}

fn default_boot() -> usize {
    199
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransProbParams {
    #[serde(default = "default_method")]
    method: Method,
    #[serde(default)]
    s: f64,
    #[serde(default)]
    grid: Option<Vec<f64>>,
    /// Starting state; required by `lmaj`, a row filter otherwise.
    #[serde(default)]
    from: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profile: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ties: Option<Ties>,
    #[serde(default = "default_boot")]
    n_boot: usize,
    #[serde(default = "default_conf")]
    conf_level: f64,
    #[serde(default)]
    seed: Option<u64>,
}

fn default_method() -> Method {
    Method::Aj
}

/// Point estimator for one resample of subjects (`None` = full data).
fn tp_estimate(
    bound: &Bound,
    p: &TransProbParams,
    grid: Option<&[f64]>,
    idx: Option<&[usize]>,
) -> Result<Vec<ProbabilityCurve>> {
    let long_owned;
    let long = match idx {
        None => bound.long().expect("multi-state data"),
        Some(idx) => {
            long_owned = match bound {
                Bound::Idm { data, .. } => idm_to_long(&data.select(idx))?,
                Bound::Msm { long, .. } => long.resample(idx),
                Bound::Survival(_) => unreachable!(),
            };
            &long_owned
        }
    };
    let idm = || -> Result<ValidatedIdmData> {
        let d = idm_data(bound)?;
        Ok(match idx {
            None => d.clone(),
            Some(idx) => d.select(idx),
        })
    };
    let curves = match p.method {
        Method::Aj => msmprob::aalen_johansen(long, p.s, grid)?,
        Method::Lmaj => msmprob::landmark_aalen_johansen(long, p.s, p.from.unwrap_or(1), grid)?,
        Method::Lm => msmprob::landmark_idm(&idm()?, p.s, grid)?,
        Method::Plm => msmprob::presmoothed_landmark_idm(&idm()?, p.s, grid)?,
        Method::Ipcw => {
            let cov = p.covariate.as_deref().expect("validated");
            let x0 = p.value.expect("validated");
            msmprob::ipcw_conditional(&idm()?, p.s, grid, cov, x0, p.bandwidth)?
        }
        Method::Breslow => msmprob::breslow_conditional(
            long,
            p.s,
            grid,
            p.covariates.as_deref().unwrap_or(&[]),
            p.profile.as_ref().expect("validated"),
            p.ties.unwrap_or_default(),
        )?,
    };
    Ok(match (p.method, p.from) {
        (Method::Lmaj, _) | (_, None) => curves,
        (_, Some(h)) => curves.into_iter().filter(|c| c.from == h).collect(),
    })
}

fn transprob(bound: &Bound, mut p: TransProbParams, seed: u64) -> Result<(Value, Value)> {
    conf_level_ok(p.conf_level)?;
    let seed = *p.seed.get_or_insert(seed);
    if matches!(p.method, Method::Lm | Method::Plm | Method::Ipcw) {
        idm_data(bound)?;
    }
    let n_states = bound.long().expect("multi-state data").system.n_states();
    match p.from {
        Some(h) if h == 0 || h > n_states => {
            return Err(Error::InvalidParameter(format!(
                "from must be a state in 1..={n_states}"
            )))
        }
        None if p.method == Method::Lmaj => p.from = Some(1),
        _ => {}
    }
    let ipcw = p.method == Method::Ipcw;
    if ipcw != (p.covariate.is_some() && p.value.is_some()) || (!ipcw && p.bandwidth.is_some()) {
        return Err(Error::InvalidParameter(
            "covariate, value and bandwidth apply to (and covariate, value are required by) the ipcw method".into(),
        ));
    }
    if p.method == Method::Breslow {
        let covs = p
            .covariates
            .get_or_insert_with(|| bound.model_covariates().to_vec())
            .clone();
        let profile = p.profile.get_or_insert_with(BTreeMap::new);
        if let Some(missing) = covs.iter().find(|c| !profile.contains_key(*c)) {
            return Err(Error::InvalidParameter(format!(
                "profile has no value for `{missing}`"
            )));
        }
        p.ties.get_or_insert(Ties::Efron);
    } else if p.profile.is_some() || p.covariates.is_some() || p.ties.is_some() {
        return Err(Error::InvalidParameter(
            "profile, covariates and ties apply to the breslow method".into(),
        ));
    }
    let point = tp_estimate(bound, &p, p.grid.as_deref(), None)?;
    let grid: Vec<f64> = point
        .first()
        .map(|c| c.grid.iter().map(|g| g.t).collect())
        .unwrap_or_default();
    p.grid = Some(grid.clone());
    let curves = if p.n_boot > 0 {
        let opts = BootstrapOptions {
            n_boot: p.n_boot,
            conf_level: p.conf_level,
            seed,
        };
        let n = bound.long().expect("multi-state data").n_subjects();
        msmprob::bootstrap_ci(point, n, &opts, |idx| {
            tp_estimate(bound, &p, Some(&grid), Some(idx))
        })?
    } else {
        point
    };
    Ok((to_json(&p), json!({ "curves": curves })))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CifParams {
    #[serde(default)]
    grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bandwidth: Option<f64>,
    #[serde(default = "default_boot")]
    n_boot: usize,
    #[serde(default = "default_conf")]
    conf_level: f64,
    #[serde(default)]
    seed: Option<u64>,
}

fn cif(bound: &Bound, mut p: CifParams, seed: u64) -> Result<(Value, Value)> {
    conf_level_ok(p.conf_level)?;
    let seed = *p.seed.get_or_insert(seed);
    let d = idm_data(bound)?;
    let conditioning = match (&p.covariate, &p.level, p.value) {
        (None, None, None) if p.bandwidth.is_none() => CifConditioning::None,
        (Some(c), Some(l), None) if p.bandwidth.is_none() => CifConditioning::Level {
            covariate: c.clone(),
            level: l.clone(),
        },
        (Some(c), None, Some(v)) => CifConditioning::Continuous {
            covariate: c.clone(),
            value: v,
            bandwidth: p.bandwidth,
        },
        _ => return Err(Error::InvalidParameter(
            "conditioning takes covariate with either level, or value and an optional bandwidth"
                .into(),
        )),
    };
    let point = msmprob::cif(d, p.grid.as_deref(), &conditioning)?;
    let grid: Vec<f64> = point.grid.iter().map(|g| g.t).collect();
    p.grid = Some(grid.clone());
    let curve = if p.n_boot > 0 {
        let opts = BootstrapOptions {
            n_boot: p.n_boot,
            conf_level: p.conf_level,
            seed,
        };
        msmprob::bootstrap_ci(point, d.len(), &opts, |idx| {
            msmprob::cif(&d.select(idx), Some(&grid), &conditioning)
        })?
    } else {
        point
    };
    Ok((to_json(&p), to_json(&curve)))
}

fn markov_data(bound: &Bound) -> Result<MarkovData> {
    match bound {
        Bound::Idm { data, long } => Ok(MarkovData {
            idm: Some(data.clone()),
            long: long.clone(),
        }),
        Bound::Msm { long, .. } => Ok(MarkovData::from_long(long.clone())),
        Bound::Survival(_) => unreachable!("checked by AnalysisKind::accepts"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum LocalMethod {
    Auc,
    Logrank,
}

fn default_local_boot() -> usize {
    100
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalParams {
    #[serde(default = "default_local_method")]
    method: LocalMethod,
    transition: [usize; 2],
    /// Landmark times; defaults to the global-test landmarks.
    #[serde(default)]
    s: Option<Vec<f64>>,
    #[serde(default = "default_local_boot")]
    n_boot: usize,
    #[serde(default)]
    seed: Option<u64>,
}

fn default_local_method() -> LocalMethod {
    LocalMethod::Auc
}

fn markov_local(bound: &Bound, mut p: LocalParams, seed: u64) -> Result<(Value, Value)> {
    let d = markov_data(bound)?;
    let [from, to] = p.transition;
    if d.long.system.number(from, to).is_none()
        && !(from == to && from >= 1 && from <= d.long.system.n_states())
    {
        return Err(Error::InvalidParameter(format!(
            "{from} -> {to} is not a transition of the system"
        )));
    }
    if p.method == LocalMethod::Logrank {
        p.seed = None;
    } else {
        p.seed.get_or_insert(seed);
    }
    let s_values =
        p.s.get_or_insert_with(|| markovcheck::default_landmarks(&d, from, None))
            .clone();
    if s_values.is_empty() {
        return Err(Error::InvalidParameter("no landmark times".into()));
    }
    let results: Vec<Value> = s_values
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let r = match p.method {
                LocalMethod::Auc => {
                    let seed = p.seed.expect("set above").wrapping_add(k as u64);
                    markovcheck::local_auc_test(&d, s, from, to, p.n_boot, seed)
                }
                LocalMethod::Logrank => markovcheck::local_logrank_test(&d, s, from, to),
            };
            match r {
                Ok(r) => to_json(&r),
                Err(e) => {
                    let mut v = inline_error(&e);
                    v["s"] = json!(s);
                    v
                }
            }
        })
        .collect();
    Ok((to_json(&p), json!({ "results": results })))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum GlobalMethod {
    Cox,
    Auc,
    Logrank,
}

fn default_perm() -> usize {
    500
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GlobalParams {
    #[serde(default = "default_global_method")]
    method: GlobalMethod,
    /// `[from, to]`; every applicable transition when absent.
    #[serde(default)]
    transition: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clock: Option<ClockMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ties: Option<Ties>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    percentiles: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_boot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_perm: Option<usize>,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

fn default_global_method() -> GlobalMethod {
    GlobalMethod::Cox
}

fn markov_global(bound: &Bound, mut p: GlobalParams, seed: u64) -> Result<(Value, Value)> {
    if !(p.alpha > 0.0 && p.alpha < 1.0) {
        return Err(Error::InvalidParameter("alpha must be in (0, 1)".into()));
    }
    let d = markov_data(bound)?;
    let wrong = |name: &str| {
        Error::InvalidParameter(format!(
            "{name} does not apply to the {:?} method",
            p.method
        ))
    };
    match p.method {
        GlobalMethod::Cox => {
            if p.percentiles.is_some()
                || p.s_grid.is_some()
                || p.n_boot.is_some()
                || p.n_perm.is_some()
            {
                return Err(wrong("resampling or landmark settings"));
            }
            p.clock.get_or_insert(ClockMode::Markov);
            p.ties.get_or_insert(Ties::Efron);
        }
        GlobalMethod::Auc => {
            if p.clock.is_some() || p.ties.is_some() || p.s_grid.is_some() || p.n_perm.is_some() {
                return Err(wrong("clock, ties, s_grid or n_perm"));
            }
            p.n_boot.get_or_insert(default_local_boot());
            p.seed.get_or_insert(seed);
        }
        GlobalMethod::Logrank => {
            if p.clock.is_some()
                || p.ties.is_some()
                || p.percentiles.is_some()
                || p.n_boot.is_some()
            {
                return Err(wrong("clock, ties, percentiles or n_boot"));
            }
            p.n_perm.get_or_insert(default_perm());
            p.seed.get_or_insert(seed);
        }
    }
    let sys = &d.long.system;
    let transitions: Vec<(usize, usize)> = match p.transition {
        Some([from, to]) => {
            if sys.number(from, to).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "{from} -> {to} is not a transition of the system"
                )));
            }
            vec![(from, to)]
        }
        // Entry into the initial state carries no history, so the Cox and
        // log-rank tests only apply from later states.
        None => sys
            .transitions()
            .iter()
            .filter(|t| p.method == GlobalMethod::Auc || t.from != 1)
            .map(|t| (t.from, t.to))
            .collect(),
    };
    let results: Vec<Value> = transitions
        .iter()
        .map(|&(from, to)| {
            let r = match p.method {
                GlobalMethod::Cox => markovcheck::global_cox_test(
                    &d,
                    from,
                    to,
                    p.clock.unwrap_or_default(),
                    p.ties.unwrap_or_default(),
                    p.alpha,
                ),
                GlobalMethod::Auc => markovcheck::global_auc_test(
                    &d,
                    from,
                    to,
                    p.percentiles.as_deref(),
                    p.n_boot.unwrap_or_default(),
                    p.alpha,
                    p.seed.unwrap_or_default(),
                ),
                GlobalMethod::Logrank => markovcheck::global_logrank_test(
                    &d,
                    from,
                    to,
                    p.s_grid.as_deref(),
                    p.n_perm.unwrap_or_default(),
                    p.alpha,
                    p.seed.unwrap_or_default(),
                ),
            };
            match r {
                Ok(r) => to_json(&r),
                Err(e) => {
                    let mut v = inline_error(&e);
                    v["transition"] = json!({"from": from, "to": to});
                    v
                }
            }
        })
        .collect();
    Ok((to_json(&p), json!({ "results": results })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_csv;

    fn survival() -> (Dataset, Mapping) {
        let csv = "time,status,g,x\n1,1,a,0.5\n2,0,b,1.5\n3,1,a,\n4,1,b,2\n5,0,a,3\n6,1,b,1\n,1,a,2\n7,1,a,0\n";
        let d = parse_csv(csv.as_bytes(), None).unwrap();
        let m = Mapping::Survival(SurvivalMapping {
            time: "time".into(),
            status: "status".into(),
            covariates: vec!["x".into()],
        });
        (d, m)
    }

    fn idm() -> Bound {
        let csv = "time1,event1,stime,event,x\n\
                   10,1,30,1,0\n20,0,20,1,1\n5,1,40,0,0.5\n15,1,25,1,2\n\
                   30,0,30,0,1\n8,1,12,1,0\n25,0,25,1,0.2\n12,1,50,0,1.2\n";
        let d = parse_csv(csv.as_bytes(), None).unwrap();
        let m: Mapping = serde_json::from_value(json!({
            "kind": "idm", "time1": "time1", "event1": "event1",
            "stime": "stime", "event": "event", "covariates": ["x"]
        }))
        .unwrap();
        bind(&d, &m).unwrap().0
    }

    #[test]
    fn report_lists_dropped_rows() {
        let (d, m) = survival();
        let (_, r) = bind(&d, &m).unwrap();
        assert_eq!(r.n_rows, 8);
        assert_eq!(r.n_used, 7);
        assert_eq!(r.dropped_rows, vec![7]);
    }

    #[test]
    fn names_round_trip() {
        for k in AnalysisKind::ALL {
            assert_eq!(k.name().parse::<AnalysisKind>().unwrap(), k);
            assert_eq!(k.endpoint().parse::<AnalysisKind>().unwrap(), k);
        }
    }

    #[test]
    fn defaults_are_echoed() {
        let (d, m) = survival();
        let (b, _) = bind(&d, &m).unwrap();
        let out = run(AnalysisKind::Km, &b, &Value::Null, 1).unwrap();
        assert_eq!(
            out["params"],
            json!({"group_by": null, "conf_level": 0.95, "conf_type": "log"})
        );
        let out = run(AnalysisKind::Cox, &b, &json!({}), 1).unwrap();
        assert_eq!(out["params"]["covariates"], json!(["x"]));
        assert_eq!(out["params"]["ties"], json!("efron"));
    }

    #[test]
    fn unknown_parameter_rejected() {
        let (d, m) = survival();
        let (b, _) = bind(&d, &m).unwrap();
        let e = run(AnalysisKind::Km, &b, &json!({"grup_by": "g"}), 1).unwrap_err();
        assert_eq!(e.code(), "InvalidParameter");
    }

    #[test]
    fn incompatible_kind() {
        let (d, m) = survival();
        let (b, _) = bind(&d, &m).unwrap();
        let e = run(AnalysisKind::TransProb, &b, &json!({}), 1).unwrap_err();
        assert_eq!(e.code(), "IncompatibleMapping");
        let e = run(AnalysisKind::Km, &idm(), &json!({}), 1).unwrap_err();
        assert_eq!(e.code(), "IncompatibleMapping");
    }

    #[test]
    fn seed_is_echoed_and_reproducible() {
        let b = idm();
        let p = json!({"method": "aj", "s": 0, "n_boot": 20});
        let a = run(AnalysisKind::TransProb, &b, &p, 7).unwrap();
        let c = run(AnalysisKind::TransProb, &b, &p, 7).unwrap();
        assert_eq!(a["params"]["seed"], json!(7));
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
        let explicit = run(
            AnalysisKind::TransProb,
            &b,
            &json!({"method": "aj", "s": 0, "n_boot": 20, "seed": 7}),
            99,
        )
        .unwrap();
        assert_eq!(a, explicit);
    }

    #[test]
    fn identity_at_grid_s() {
        let b = idm();
        let out = run(
            AnalysisKind::TransProb,
            &b,
            &json!({"s": 0, "grid": [0], "n_boot": 0}),
            1,
        )
        .unwrap();
        for c in out["result"]["curves"].as_array().unwrap() {
            let want = if c["from"] == c["to"] { 1.0 } else { 0.0 };
            assert_eq!(c["grid"][0]["est"].as_f64().unwrap(), want);
        }
    }

    #[test]
    fn cox_needs_transition_on_multistate() {
        let b = idm();
        assert_eq!(
            run(AnalysisKind::Cox, &b, &json!({}), 1)
                .unwrap_err()
                .code(),
            "InvalidParameter"
        );
        let out = run(AnalysisKind::Cox, &b, &json!({"transition": [1, 2]}), 1).unwrap();
        assert_eq!(out["params"]["clock"], json!("markov"));
    }

    #[test]
    fn global_errors_are_inline() {
        let b = idm();
        let out = run(AnalysisKind::MarkovGlobal, &b, &json!({"method": "cox"}), 1).unwrap();
        let results = out["result"]["results"].as_array().unwrap();
        assert_eq!(results.len(), 1);
        assert!(out["params"].get("seed").is_none());
    }
}
