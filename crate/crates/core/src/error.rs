use thiserror::Error;

/// Errors raised by parsing, validation and estimation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("input file is empty")]
    EmptyFile,
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRows {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column name `{0}`")]
    DuplicateColumnName(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("column `{column}` must be numeric")]
    NonNumericColumn { column: String },
    #[error("status column `{column}` has value {value} at row {row}; expected 0 or 1")]
    NonBinaryStatus {
        column: String,
        row: usize,
        value: String,
    },
    #[error("time column `{column}` is negative at row {row}")]
    NegativeTime { column: String, row: usize },
    #[error("inconsistent event times at rows {rows:?}")]
    InconsistentTimes { rows: Vec<usize> },
    #[error("self transition at state {0}")]
    SelfTransition(usize),
    #[error("duplicate transition {from} -> {to}")]
    DuplicateEdge { from: usize, to: usize },
    #[error("invalid transition system: {0}")]
    InvalidSystem(String),
    #[error(
        "subject {subject}: observed path uses transition {from} -> {to}, absent from the schema"
    )]
    PathInconsistent {
        subject: usize,
        from: usize,
        to: usize,
    },
    #[error("no events observed")]
    NoEvents,
    #[error("group column `{0}` not found")]
    UnknownGroupColumn(String),
    #[error("at least two non-empty groups are required")]
    SingleGroup,
    #[error("information matrix is singular (collinear covariates)")]
    SingularInformation,
    #[error("optimisation diverged: {0}")]
    Diverged(String),
    #[error("too few events: {events} observed, at least {required} required")]
    TooFewEvents { events: usize, required: usize },
    #[error("covariate `{column}` has {distinct} distinct values, at least {required} required")]
    TooFewDistinctValues {
        column: String,
        distinct: usize,
        required: usize,
    },
    #[error("non-positive time at row {row} for a log-time distribution")]
    NonPositiveTime { row: usize },
    #[error("no subject occupies state {state} at time {s}")]
    EmptyLandmarkSet { state: usize, s: f64 },
    #[error("bandwidth must be positive")]
    BandwidthNonPositive,
    #[error("entry-time covariate is constant for transition {from} -> {to}")]
    DegenerateCovariate { from: usize, to: usize },
    #[error("{failed} of {total} bootstrap replicates failed")]
    BootstrapFailed { failed: usize, total: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("analysis `{analysis}` is not available for {kind} data")]
    IncompatibleMapping { analysis: String, kind: String },
}

impl Error {
    /// Stable machine-readable code, the variant name.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyFile => "EmptyFile",
            Error::RaggedRows { .. } => "RaggedRows",
            Error::DuplicateColumnName(_) => "DuplicateColumnName",
            Error::Csv(_) => "Csv",
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonNumericColumn { .. } => "NonNumericColumn",
            Error::NonBinaryStatus { .. } => "NonBinaryStatus",
            Error::NegativeTime { .. } => "NegativeTime",
            Error::InconsistentTimes { .. } => "InconsistentTimes",
            Error::SelfTransition(_) => "SelfTransition",
            Error::DuplicateEdge { .. } => "DuplicateEdge",
            Error::InvalidSystem(_) => "InvalidSystem",
            Error::PathInconsistent { .. } => "PathInconsistent",
            Error::NoEvents => "NoEvents",
            Error::UnknownGroupColumn(_) => "UnknownGroupColumn",
            Error::SingleGroup => "SingleGroup",
            Error::SingularInformation => "SingularInformation",
            Error::Diverged(_) => "Diverged",
            Error::TooFewEvents { .. } => "TooFewEvents",
            Error::TooFewDistinctValues { .. } => "TooFewDistinctValues",
            Error::NonPositiveTime { .. } => "NonPositiveTime",
            Error::EmptyLandmarkSet { .. } => "EmptyLandmarkSet",
            Error::BandwidthNonPositive => "BandwidthNonPositive",
            Error::DegenerateCovariate { .. } => "DegenerateCovariate",
            Error::BootstrapFailed { .. } => "BootstrapFailed",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::IncompatibleMapping { .. } => "IncompatibleMapping",
        }
    }

    /// Input and parameter problems, as opposed to failures of an estimator
    /// on otherwise valid input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::EmptyFile
                | Error::RaggedRows { .. }
                | Error::DuplicateColumnName(_)
                | Error::Csv(_)
                | Error::MissingColumn(_)
                | Error::NonNumericColumn { .. }
                | Error::NonBinaryStatus { .. }
                | Error::NegativeTime { .. }
                | Error::InconsistentTimes { .. }
                | Error::SelfTransition(_)
                | Error::DuplicateEdge { .. }
                | Error::InvalidSystem(_)
                | Error::PathInconsistent { .. }
                | Error::UnknownGroupColumn(_)
                | Error::BandwidthNonPositive
                | Error::InvalidParameter(_)
                | Error::IncompatibleMapping { .. }
        )
    }

    /// Structured detail for JSON error payloads.
    pub fn detail(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            Error::RaggedRows {
                line,
                expected,
                found,
            } => json!({"line": line, "expected": expected, "found": found}),
            Error::DuplicateColumnName(c)
            | Error::MissingColumn(c)
            | Error::UnknownGroupColumn(c) => {
                json!({"column": c})
            }
            Error::NonBinaryStatus { column, row, value } => {
                json!({"column": column, "row": row, "value": value})
            }
            Error::NegativeTime { column, row } => json!({"column": column, "row": row}),
            Error::InconsistentTimes { rows } => json!({"rows": rows}),
            Error::SelfTransition(s) => json!({"state": s}),
            Error::DuplicateEdge { from, to } => json!({"from": from, "to": to}),
            Error::PathInconsistent { subject, from, to } => {
                json!({"subject": subject, "from": from, "to": to})
            }
            Error::TooFewEvents { events, required } => {
                json!({"events": events, "required": required})
            }
            Error::EmptyLandmarkSet { state, s } => json!({"state": state, "s": s}),
            Error::BootstrapFailed { failed, total } => json!({"failed": failed, "total": total}),
            _ => serde_json::Value::Null,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
