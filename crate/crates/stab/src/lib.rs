//! Experiment harness around `distill_core`.
//!
//! Loads tabular data (CSV plus a JSON schema), ships the two benchmark
//! datasets, trains and caches the teacher forest, runs repeated
//! distillations with and without stabilization, and writes the
//! structure-proportion, audit, entropy-grid and theory-grid files.

pub mod datasets;
pub mod experiment;
pub mod io;
pub mod memo;
pub mod theory_grid;

mod error;

pub use error::{Error, Result};
