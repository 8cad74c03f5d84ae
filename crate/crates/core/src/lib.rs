//! Multi-state survival analysis.
//!
//! Classical survival estimation and regression, illness-death and general
//! multi-state transition-probability estimators, and tests of the Markov
//! assumption, over CSV inputs bound to column roles.

pub mod analysis;
pub mod data;
pub mod error;
pub mod markovcheck;
pub mod msmprob;
pub mod regression;
pub mod simulate;
pub mod stats;
pub mod survival;

pub use error::{Error, Result};
