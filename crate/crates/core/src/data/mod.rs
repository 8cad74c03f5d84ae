//! Input handling: CSV parsing, column-role mappings, transition schemas and
//! the wide-to-long expansion used by per-transition models.

pub mod covariates;
pub mod dataset;
pub mod long;
pub mod mapping;
pub mod system;

pub use covariates::{Covariate, CovariateTable, CovariateValues};
pub use dataset::{parse_csv, Column, ColumnKind, Dataset, Value};
pub use long::{
    count_transitions, idm_to_long, msm_to_long, CountMatrix, Episode, LongFormatData, LongRow,
};
pub use mapping::{
    bind_idm, bind_msm, bind_survival, IdmMapping, MsmMapping, StateColumns, SurvivalMapping,
    ValidatedIdmData, ValidatedMsmData, ValidatedSurvivalData, WideRecord,
};
pub use system::{SystemSpec, Transition, TransitionSystem};
