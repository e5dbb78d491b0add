//! File formats, sweep harness and command-line front end around
//! [`ablate_core`].

pub mod cli;
pub mod container;
pub mod error;
pub mod harness;
pub mod idx;

pub use error::{Error, ErrorClass, Result};
pub use harness::{run_sweep, CellKey, CellSummary, SweepConfig, SweepResult, TrialRecord};
