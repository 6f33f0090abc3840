//! Experiment orchestration on top of `gcalab`: single training runs,
//! config sweeps, parameter-matched scaling curves, correlation analysis
//! and report emission, with a crash-resumable results store.

pub mod analyze;
pub mod cli;
pub mod error;
pub mod matching;
pub mod report;
pub mod scaling;
pub mod spec;
pub mod store;
pub mod svg;
pub mod sweep;
pub mod train;

pub use error::{Result, RunError};
