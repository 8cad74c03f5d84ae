//! `msm`: run any analysis on a CSV file and print the JSON result.

mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msm_core::analysis::{self, AnalysisKind, Mapping, ModelKind};
use msm_core::data::{parse_csv, IdmMapping, SurvivalMapping};
use serde_json::{json, Map, Value};

#[derive(Parser, Debug)]
#[command(
    name = "msm",
    about = "Survival and multi-state analyses from CSV files",
    disable_version_flag = true
)]
struct Cli {
    /// Print name and version as JSON and exit.
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Kaplan-Meier curves.
    Km {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        group_by: Option<String>,
        #[arg(long)]
        conf_level: Option<f64>,
        /// plain, log or log-log.
        #[arg(long)]
        conf_type: Option<String>,
    },
    /// G-rho rank test between groups.
    Ranktest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        group: Option<String>,
        /// 0 for log-rank, 1 for Peto-Peto.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Cox proportional hazards fit.
    Cox {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: CoxArgs,
    },
    /// Proportional hazards test of a Cox fit.
    Phtest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: CoxArgs,
        /// km, identity or log.
        #[arg(long)]
        transform: Option<String>,
    },
    /// Sequential likelihood-ratio table and spline nonlinearity tests.
    Anova {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: CoxArgs,
        /// Covariates tested for nonlinearity (default: every numeric term).
        #[arg(long, value_delimiter = ',')]
        nonlinearity: Option<Vec<String>>,
    },
    /// Parametric accelerated failure time fits.
    Aft {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        distributions: Option<Vec<String>>,
    },
    /// Observed transition counts.
    Counts {
        #[command(flatten)]
        data: DataArgs,
        /// Number shown for the initial state (0 or 1).
        #[arg(long)]
        display_base: Option<usize>,
    },
    /// Per-transition Cox regressions.
    Msmreg {
        #[command(flatten)]
        data: DataArgs,
        /// markov or semi_markov.
        #[arg(long)]
        clock: Option<String>,
        #[arg(long)]
        ties: Option<String>,
    },
    /// Transition probabilities.
    Transprob {
        #[command(flatten)]
        data: DataArgs,
        /// aj, lm, plm, lmaj, ipcw or breslow.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        from: Option<usize>,
        #[arg(long)]
        covariate: Option<String>,
        #[arg(long)]
        value: Option<f64>,
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Covariate values, `a=1,b=2` or positional in covariate order.
        #[arg(long, value_delimiter = ',')]
        profile: Option<Vec<String>>,
        #[arg(long)]
        ties: Option<String>,
        #[command(flatten)]
        boot: BootArgs,
    },
    /// Cumulative incidence of the intermediate state.
    Cif {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        covariate: Option<String>,
        #[arg(long)]
        level: Option<String>,
        #[arg(long)]
        value: Option<f64>,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[command(flatten)]
        boot: BootArgs,
    },
    /// Local Markov tests at landmark times.
    MarkovLocal {
        #[command(flatten)]
        data: DataArgs,
        /// auc or logrank.
        #[arg(long)]
        method: Option<String>,
        /// `from,to`.
        #[arg(long, value_delimiter = ',')]
        transition: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        s: Option<Vec<f64>>,
        #[arg(long)]
        n_boot: Option<usize>,
    },
    /// Global Markov tests.
    MarkovGlobal {
        #[command(flatten)]
        data: DataArgs,
        /// cox, auc or logrank.
        #[arg(long)]
        method: Option<String>,
        /// `from,to`; every applicable transition when omitted.
        #[arg(long, value_delimiter = ',')]
        transition: Option<Vec<usize>>,
        #[arg(long)]
        clock: Option<String>,
        #[arg(long)]
        ties: Option<String>,
        #[arg(long, value_delimiter = ',')]
        percentiles: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        s_grid: Option<Vec<f64>>,
        #[arg(long)]
        n_boot: Option<usize>,
        #[arg(long)]
        n_perm: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file.
    #[arg(long)]
    input: PathBuf,
    /// Field delimiter, `,` or `;` (detected when omitted).
    #[arg(long)]
    delimiter: Option<char>,
    /// Data model: survival, idm or msm (msm needs --mapping).
    #[arg(long)]
    kind: Option<String>,
    /// Mapping as a JSON file or inline JSON; overrides the column flags.
    #[arg(long)]
    mapping: Option<String>,
    #[arg(long, default_value = "time")]
    time: String,
    #[arg(long, default_value = "status")]
    status: String,
    #[arg(long, default_value = "time1")]
    time1: String,
    #[arg(long, default_value = "event1")]
    event1: String,
    #[arg(long, default_value = "Stime")]
    stime: String,
    #[arg(long, default_value = "event")]
    event: String,
    /// Model covariates.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Seed for resampling (random when omitted; always echoed).
    #[arg(long)]
    seed: Option<u64>,
    /// Extra analysis parameters as a JSON object; flags take precedence.
    #[arg(long)]
    params: Option<String>,
    /// Write curve grids as CSV to this path.
    #[arg(long)]
    emit_plot_data: Option<PathBuf>,
    /// Indented JSON output.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args, Debug)]
struct CoxArgs {
    /// efron or breslow.
    #[arg(long)]
    ties: Option<String>,
    /// `from,to` for multi-state data.
    #[arg(long, value_delimiter = ',')]
    transition: Option<Vec<usize>>,
    #[arg(long)]
    clock: Option<String>,
}

#[derive(Args, Debug)]
struct BootArgs {
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long)]
    conf_level: Option<f64>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    body: Value,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            body: json!({"error": "Usage", "message": message.into(), "detail": null}),
        }
    }
}

impl From<msm_core::Error> for Failure {
    fn from(e: msm_core::Error) -> Failure {
        Failure {
            code: if e.is_validation() { 2 } else { 3 },
            body: json!({"error": e.code(), "message": e.to_string(), "detail": e.detail()}),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!(
            "{}",
            json!({"name": "msm", "version": env!("CARGO_PKG_VERSION")})
        );
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("a subcommand is required; see `msm --help`");
        return ExitCode::from(2);
    };
    match execute(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.body);
            ExitCode::from(f.code)
        }
    }
}

/// Parameter object under construction.
struct Params(Map<String, Value>);

impl Params {
    fn set<T: Into<Value>>(&mut self, key: &str, v: Option<T>) {
        if let Some(v) = v {
            self.0.insert(key.to_string(), v.into());
        }
    }

    fn transition(&mut self, v: Option<Vec<usize>>) -> Result<(), Failure> {
        match v {
            Some(t) if t.len() != 2 => Err(Failure::usage("--transition takes `from,to`")),
            other => {
                self.set("transition", other);
                Ok(())
            }
        }
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    use AnalysisKind as K;
    let mut p = Params(Map::new());
    let mut profile: Option<Vec<String>> = None;
    let (kind, data) = match command {
        Command::Km {
            data,
            group_by,
            conf_level,
            conf_type,
        } => {
            p.set("group_by", group_by);
            p.set("conf_level", conf_level);
            p.set("conf_type", conf_type);
            (K::Km, data)
        }
        Command::Ranktest { data, group, rho } => {
            p.set("group", group);
            p.set("rho", rho);
            (K::RankTest, data)
        }
        Command::Cox { data, model } => {
            cox_args(&mut p, model)?;
            (K::Cox, data)
        }
        Command::Phtest {
            data,
            model,
            transform,
        } => {
            cox_args(&mut p, model)?;
            p.set("transform", transform);
            (K::PhTest, data)
        }
        Command::Anova {
            data,
            model,
            nonlinearity,
        } => {
            cox_args(&mut p, model)?;
            p.set("nonlinearity", nonlinearity);
            (K::Anova, data)
        }
        Command::Aft {
            data,
            distributions,
        } => {
            p.set("distributions", distributions);
            (K::Aft, data)
        }
        Command::Counts { data, display_base } => {
            p.set("display_base", display_base);
            (K::Counts, data)
        }
        Command::Msmreg { data, clock, ties } => {
            p.set("clock", clock);
            p.set("ties", ties);
            (K::MsmReg, data)
        }
        Command::Transprob {
            data,
            method,
            s,
            grid,
            from,
            covariate,
            value,
            bandwidth,
            profile: prof,
            ties,
            boot,
        } => {
            p.set("method", method);
            p.set("s", s);
            p.set("grid", grid);
            p.set("from", from);
            p.set("covariate", covariate);
            p.set("value", value);
            p.set("bandwidth", bandwidth);
            p.set("ties", ties);
            p.set("n_boot", boot.n_boot);
            p.set("conf_level", boot.conf_level);
            profile = prof;
            (K::TransProb, data)
        }
        Command::Cif {
            data,
            grid,
            covariate,
            level,
            value,
            bandwidth,
            boot,
        } => {
            p.set("grid", grid);
            p.set("covariate", covariate);
            p.set("level", level);
            p.set("value", value);
            p.set("bandwidth", bandwidth);
            p.set("n_boot", boot.n_boot);
            p.set("conf_level", boot.conf_level);
            (K::Cif, data)
        }
        Command::MarkovLocal {
            data,
            method,
            transition,
            s,
            n_boot,
        } => {
            p.set("method", method);
            p.transition(transition)?;
            p.set("s", s);
            p.set("n_boot", n_boot);
            (K::MarkovLocal, data)
        }
        Command::MarkovGlobal {
            data,
            method,
            transition,
            clock,
            ties,
            percentiles,
            s_grid,
            n_boot,
            n_perm,
            alpha,
        } => {
            p.set("method", method);
            p.transition(transition)?;
            p.set("clock", clock);
            p.set("ties", ties);
            p.set("percentiles", percentiles);
            p.set("s_grid", s_grid);
            p.set("n_boot", n_boot);
            p.set("n_perm", n_perm);
            p.set("alpha", alpha);
            (K::MarkovGlobal, data)
        }
    };

    if data.emit_plot_data.is_some() && !plot::supported(kind) {
        return Err(Failure::usage(format!(
            "--emit-plot-data is not available for {kind}"
        )));
    }
    let mapping = mapping(kind, &data)?;
    if let Some(values) = profile {
        let covariates = match &mapping {
            Mapping::Survival(m) => m.covariates.clone(),
            Mapping::Idm(m) => m.covariates.clone(),
            Mapping::Msm(m) => m.covariates.clone(),
        };
        p.0.insert("profile".into(), profile_object(&values, &covariates)?);
    }
    let mut params = match &data.params {
        None => Map::new(),
        Some(text) => match serde_json::from_str(text) {
            Ok(Value::Object(m)) => m,
            _ => return Err(Failure::usage("--params must be a JSON object")),
        },
    };
    params.extend(p.0);
    if let Some(seed) = data.seed {
        params.insert("seed".into(), json!(seed));
    }

    let bytes = std::fs::read(&data.input)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", data.input.display())))?;
    let delimiter = match data.delimiter {
        None => None,
        Some(',') => Some(b','),
        Some(';') => Some(b';'),
        Some(c) => return Err(Failure::usage(format!("unsupported delimiter `{c}`"))),
    };
    let dataset = parse_csv(&bytes, delimiter)?;
    let (bound, _) = analysis::bind(&dataset, &mapping)?;
    let fallback_seed = data.seed.unwrap_or_else(|| rand::random::<u32>() as u64);
    let out = analysis::run(kind, &bound, &Value::Object(params), fallback_seed)?;

    if let Some(path) = &data.emit_plot_data {
        let csv = plot::curves_csv(kind, &out["result"]).map_err(|e| Failure {
            code: 3,
            body: json!({"error": "PlotData", "message": e.to_string(), "detail": null}),
        })?;
        std::fs::write(path, csv)
            .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
    }
    let text = if data.pretty {
        serde_json::to_string_pretty(&out)
    } else {
        serde_json::to_string(&out)
    }
    .expect("serializable");
    println!("{text}");
    Ok(())
}

fn cox_args(p: &mut Params, a: CoxArgs) -> Result<(), Failure> {
    p.set("ties", a.ties);
    p.set("clock", a.clock);
    p.transition(a.transition)
}

/// Default data model of each subcommand.
fn default_kind(kind: AnalysisKind) -> ModelKind {
    match kind {
        AnalysisKind::Km
        | AnalysisKind::RankTest
        | AnalysisKind::Cox
        | AnalysisKind::PhTest
        | AnalysisKind::Anova
        | AnalysisKind::Aft => ModelKind::Survival,
        _ => ModelKind::Idm,
    }
}

fn mapping(kind: AnalysisKind, d: &DataArgs) -> Result<Mapping, Failure> {
    let model = match &d.kind {
        Some(k) => k.parse::<ModelKind>()?,
        None => default_kind(kind),
    };
    let mut m = match &d.mapping {
        Some(src) => {
            let text = if src.trim_start().starts_with('{') {
                src.clone()
            } else {
                std::fs::read_to_string(src)
                    .map_err(|e| Failure::usage(format!("cannot read mapping {src}: {e}")))?
            };
            let v: Value =
                serde_json::from_str(&text).map_err(|e| Failure::usage(format!("mapping: {e}")))?;
            let mut v = v;
            if let Some(obj) = v.as_object_mut() {
                obj.entry("kind").or_insert_with(|| json!(model));
            }
            Mapping::from_json(v)?
        }
        None => match model {
            ModelKind::Survival => Mapping::Survival(SurvivalMapping {
                time: d.time.clone(),
                status: d.status.clone(),
                covariates: vec![],
            }),
            ModelKind::Idm => Mapping::Idm(IdmMapping {
                time1: d.time1.clone(),
                event1: d.event1.clone(),
                stime: d.stime.clone(),
                event: d.event.clone(),
                covariates: vec![],
            }),
            ModelKind::Msm => return Err(Failure::usage("multi-state data needs --mapping")),
        },
    };
    if let Some(c) = &d.covariates {
        match &mut m {
            Mapping::Survival(x) => x.covariates = c.clone(),
            Mapping::Idm(x) => x.covariates = c.clone(),
            Mapping::Msm(x) => x.covariates = c.clone(),
        }
    }
    Ok(m)
}

fn profile_object(values: &[String], covariates: &[String]) -> Result<Value, Failure> {
    let mut out = Map::new();
    if values.iter().all(|v| v.contains('=')) {
        for v in values {
            let (k, x) = v.split_once('=').expect("checked");
            out.insert(k.to_string(), json!(x));
        }
    } else {
        if values.len() != covariates.len() {
            return Err(Failure::usage(format!(
                "--profile has {} values for {} covariates",
                values.len(),
                covariates.len()
            )));
        }
        for (k, x) in covariates.iter().zip(values) {
            out.insert(k.clone(), json!(x));
        }
    }
    Ok(Value::Object(out))
}
