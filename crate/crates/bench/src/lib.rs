//! Shared fixtures for the benchmarks.

use majorant_core::pipeline::{prepare, Settings, Setup};
use majorant_core::problems::{manufactured_problem, ManufacturedId, ManufacturedProblem};

/// A prepared run of a built-in problem at `n` cells per axis and `n` steps.
pub fn fixture(id: ManufacturedId, n: usize) -> (ManufacturedProblem, Settings, Setup) {
    let mp = manufactured_problem(id);
    let s = Settings { resolution: n, time_steps: n, ..Settings::default() };
    let setup = prepare(&mp.spec, &s, None, None).expect("built-in problems prepare");
    (mp, s, setup)
}
