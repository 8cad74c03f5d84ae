//! Transition-probability estimation for multi-state models.

pub mod aj;
pub mod bootstrap;
pub mod curve;
pub mod ipcw;
pub mod landmark;
pub mod pertrans;

pub use aj::{aalen_johansen, landmark_aalen_johansen};
pub use bootstrap::{bootstrap_ci, percentile_interval, resample_indices, BootstrapOptions};
pub use curve::{
    resolve_grid, CifCurve, ClockMode, Conditioning, Curves, GridPoint, Method, ProbabilityCurve,
};
pub use ipcw::{cif, ipcw_conditional, CifConditioning};
pub use landmark::{landmark_idm, presmoothed_landmark_idm};
pub use pertrans::{
    breslow_conditional, per_transition_cox, transition_frame, FitError, TransitionFit,
};
