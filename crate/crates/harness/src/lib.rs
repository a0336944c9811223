//! Experiment harness: JSON configs in, refinement reports and raw CSV columns out.

// `!(x > 0.0)` rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod numbers;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use experiments::{run, run_with_threads, Experiment};
pub use report::{emit_report, read_report, ExperimentReport, Format, Outcome};
