//! Batch front end of the estimators: run configurations, the estimate,
//! convergence and constants workflows and their JSON/CSV reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod expr;
pub mod report;
pub mod run;

pub use config::{RunConfig, DEFAULT_CONFIG};
pub use error::CliError;
pub use report::{BoundReport, ReportRow};
pub use run::{run_constants, run_convergence, run_estimate, ConstantRow, Estimate};
