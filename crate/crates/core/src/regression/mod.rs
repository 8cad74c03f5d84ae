//! Cox and parametric survival regression.

pub mod aft;
pub mod anova;
pub mod cox;
pub mod design;
pub mod phtest;
pub mod spline;

pub use aft::{fit_aft, AftFit, Distribution};
pub use anova::{anova_sequential, nonlinearity_test, AnovaRow, AnovaTable, NonlinearityResult};
pub use cox::{
    fit_cox, partial_likelihood, CoefRow, CoxData, CoxFit, PartialLikelihood, TestRow, Ties,
};
pub use design::{Design, TermEncoding};
pub use phtest::{ph_test, PhRow, PhTestResult, TimeTransform};
