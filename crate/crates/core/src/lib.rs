//! Guaranteed two-sided bounds for the error of approximate solutions of
//! parabolic reaction-diffusion problems with mixed Dirichlet-Robin
//! boundary conditions.

// `!(x > 0.0)` is used on purpose so that NaN fails the check; index loops
// mirror the element formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod bounds;
pub mod constants;
pub mod error;
pub mod fields;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod pipeline;
pub mod problems;
pub mod quadrature;
pub mod residuals;

pub use error::{Error, Result};
pub use bounds::{
    majorant_i, majorant_i_n, majorant_ii_n, minimize_majorant_over_y, minorant, optimize_alphas, AlphaChoice,
    BoundEntry, EquivalenceConstants, MajorantInput, MajorantParams, MinorantParams,
};
pub use constants::{ConstantSet, ConstantStrategy};
pub use fields::{FluxField, MeasureWeights, SpaceTimeField, TimeGrid};
pub use mesh::{build_partition, DomainSpec, Partition};
pub use problems::{manufactured_problem, FluxMethod, ManufacturedId, ManufacturedProblem, ProblemSpec};
pub use residuals::{enforce_mean_zero, MuField, MuStrategy};
