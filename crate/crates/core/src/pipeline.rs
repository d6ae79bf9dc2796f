//! The estimate workflow: partition, approximation, flux, constants and all
//! bounds for one problem at one resolution.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{
    equivalence_constants, majorant_i, majorant_i_n, majorant_ii_n, minimize_majorant_over_y, minorant, AlphaChoice,
    BoundEntry, EquivalenceConstants, MajorantInput, MajorantParams, MinorantParams,
};
use crate::constants::{assemble_constant_set, ConstantSet, ConstantStrategy, ORACLE_GRID};
use crate::error::{Error, Result};
use crate::fields::{error_measure, Difference, FluxField, MeasureTerms, MeasureWeights, QuadratureOrder, ScalarField, SpaceTimeField, TimeGrid};
use crate::mesh::{build_partition, classify_subdomains, default_threshold, Partition};
use crate::problems::{flux_reconstruction, gradient_average_flux, reference_solver, FluxMethod, ManufacturedProblem, ProblemSpec};
use crate::residuals::{enforce_mean_zero, select_mu, CorrectionReport, MuField, MuStrategy};

/// Choice of the free function w in the second majorant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WChoice {
    #[default]
    Zero,
    /// Nodal interpolant of u − v (needs the exact solution).
    ExactInterpolant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Cells per axis (the triangle uses it as the number of edge divisions).
    pub resolution: usize,
    pub time_steps: usize,
    /// Reaction threshold splitting strong and weak cells; `None` picks a
    /// tenth of the largest reaction.
    pub threshold: Option<f64>,
    pub majorant: MajorantParams,
    /// `None` matches the κ to the weights of the decomposed majorant.
    pub minorant: Option<MinorantParams>,
    pub mu: MuStrategy,
    pub constants: ConstantStrategy,
    pub oracle_grid: usize,
    pub flux: FluxMethod,
    pub w: WChoice,
    pub optimizer_iterations: usize,
    pub cg_steps: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            resolution: 4,
            time_steps: 4,
            threshold: None,
            majorant: MajorantParams::default(),
            minorant: None,
            mu: MuStrategy::IndicatorOp,
            constants: ConstantStrategy::Hybrid,
            oracle_grid: ORACLE_GRID,
            flux: FluxMethod::LocalLift,
            w: WChoice::Zero,
            optimizer_iterations: 10,
            cg_steps: 50,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.time_steps == 0 {
            return Err(Error::InvalidParameter("resolution and time_steps must be at least 1".into()));
        }
        if let Some(p) = self.threshold {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidParameter(format!("threshold = {p} must be positive")));
            }
        }
        if self.oracle_grid < 2 {
            return Err(Error::InvalidParameter("oracle_grid must be at least 2".into()));
        }
        self.majorant.validate()?;
        if let Some(m) = &self.minorant {
            m.validate()?;
        }
        Ok(())
    }
}

/// Everything the bounds are evaluated from.
pub struct Setup {
    pub part: Arc<Partition>,
    pub times: TimeGrid,
    pub constants: ConstantSet,
    pub mu: MuField,
    pub v: SpaceTimeField,
    /// Flux after the mean-value correction (when the method applies it).
    pub y: FluxField,
    pub correction: Option<CorrectionReport>,
}

/// Builds the partition and time grid, classifies the cells and fills the
/// constants.
pub fn discretize(spec: &ProblemSpec, s: &Settings) -> Result<(Arc<Partition>, TimeGrid, ConstantSet)> {
    s.validate()?;
    spec.validate()?;
    let part = build_partition(&spec.domain, &[s.resolution])?;
    let reaction = spec.coefficients.reaction.clone();
    let order = s.majorant.order;
    let threshold = s.threshold.unwrap_or_else(|| default_threshold(&part, &*reaction, order));
    let part = classify_subdomains(&part, &*reaction, threshold, order)?;
    spec.check_coefficients(&part)?;
    let times = TimeGrid::uniform(spec.horizon, s.time_steps)?;
    let constants = assemble_constant_set(&part, &spec.domain, s.constants, s.oracle_grid)?;
    Ok((Arc::new(part), times, constants))
}

/// Runs the approximation and flux steps. `v` and `y` replace the reference
/// solution and the gradient-average flux when given.
pub fn prepare(spec: &ProblemSpec, s: &Settings, v: Option<SpaceTimeField>, y: Option<FluxField>) -> Result<Setup> {
    let (part, times, constants) = discretize(spec, s)?;
    let v = match v {
        Some(v) => v,
        None => reference_solver(spec, part.clone(), &times)?,
    };
    let mu = match s.mu {
        MuStrategy::Scan => {
            let y0 = flux_reconstruction(&v, spec, FluxMethod::GradientAverage, &MuField::constant(part.n_cells(), 0.0))?;
            let mut score = |mu: &MuField| -> Result<f64> {
                let (y, _) = enforce_mean_zero(&y0, &v, None, spec, mu, s.majorant.order)?;
                let input = MajorantInput { part: &part, v: &v, y: &y, w: None, spec, constants: &constants, mu, times: &times };
                Ok(majorant_i_n(&input, &s.majorant)?.value)
            };
            select_mu(&part, MuStrategy::Scan, Some(&mut score))?
        }
        other => select_mu(&part, other, None)?,
    };
    let y = match y {
        Some(y) => y,
        None => gradient_average_flux(&v, spec),
    };
    let (y, correction) = match s.flux {
        FluxMethod::GradientAverage => (y, None),
        FluxMethod::LocalLift => {
            let (y, c) = enforce_mean_zero(&y, &v, None, spec, &mu, s.majorant.order)?;
            (y, Some(c))
        }
    };
    Ok(Setup { part, times, constants, mu, v, y, correction })
}

/// Constant-α, μ = 0 evaluation behind the equivalence constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceDiagnostic {
    pub alphas: [f64; 3],
    pub majorant_i_n: f64,
    pub constants: EquivalenceConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizedMajorant {
    pub entry: BoundEntry,
    pub history: Vec<f64>,
}

/// All bounds of one run; a bound that does not apply carries the reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSet {
    pub majorant_i: std::result::Result<BoundEntry, String>,
    pub majorant_i_n: BoundEntry,
    pub majorant_ii_n: BoundEntry,
    pub majorant_optimized: Option<OptimizedMajorant>,
    pub minorant: BoundEntry,
    pub equivalence: std::result::Result<EquivalenceDiagnostic, String>,
    pub w: WChoice,
}

pub fn compute_bounds(setup: &Setup, spec: &ProblemSpec, s: &Settings, exact: Option<&ManufacturedProblem>) -> Result<BoundSet> {
    let (part, times, constants) = (&*setup.part, &setup.times, &setup.constants);
    let p = &s.majorant;
    let input = MajorantInput { part, v: &setup.v, y: &setup.y, w: None, spec, constants, mu: &setup.mu, times };
    let m_i = match majorant_i(&input, p) {
        Ok(e) => Ok(e),
        Err(Error::Hypothesis(msg)) if constants.friedrichs.is_none() => Err(msg),
        Err(e) => return Err(e),
    };
    let m_i_n = majorant_i_n(&input, p)?;

    let w_field = match s.w {
        WChoice::Zero => None,
        WChoice::ExactInterpolant => {
            let mp = exact.ok_or_else(|| Error::InvalidParameter("w = exact_interpolant needs a manufactured problem".into()))?;
            let u = mp.interpolant(setup.part.clone(), times.clone());
            let values = u.values().iter().zip(setup.v.values()).map(|(a, b)| a - b).collect();
            Some(SpaceTimeField::new(setup.part.clone(), times.clone(), values)?)
        }
    };
    let m_ii_n = match &w_field {
        None => majorant_ii_n(&MajorantInput { w: Some(&crate::fields::Zero), ..input }, p)?,
        Some(w) => {
            let (y_w, _) = enforce_mean_zero(&setup.y, &setup.v, Some(w), spec, &setup.mu, p.order)?;
            majorant_ii_n(&MajorantInput { y: &y_w, w: Some(w), ..input }, p)?
        }
    };

    let optimized = if s.optimizer_iterations > 0 {
        let o = minimize_majorant_over_y(
            &setup.y,
            &setup.v,
            None,
            spec,
            constants,
            &setup.mu,
            p,
            s.optimizer_iterations,
            s.cg_steps,
        )?;
        Some(OptimizedMajorant { entry: o.entry, history: o.history })
    } else {
        None
    };

    let kappa = s.minorant.clone().unwrap_or_else(|| MinorantParams::matching(&m_i_n.weights));
    let lower = minorant(part, &setup.v, spec, times, &kappa)?;
    let equivalence = equivalence_diagnostic(setup, spec, p).map_err(|e| e.to_string());
    Ok(BoundSet {
        majorant_i: m_i,
        majorant_i_n: m_i_n,
        majorant_ii_n: m_ii_n,
        majorant_optimized: optimized,
        minorant: lower,
        equivalence,
        w: s.w,
    })
}

/// M̄_I,N with μ = 0 and one α-triple for the whole interval, and the
/// constants computed from that triple.
pub fn equivalence_diagnostic(setup: &Setup, spec: &ProblemSpec, p: &MajorantParams) -> Result<EquivalenceDiagnostic> {
    let mu0 = MuField::constant(setup.part.n_cells(), 0.0);
    let (y0, _) = enforce_mean_zero(&setup.y, &setup.v, None, spec, &mu0, p.order)?;
    let params = MajorantParams { alphas: AlphaChoice::Constant, ..p.clone() };
    let input = MajorantInput {
        part: &setup.part,
        v: &setup.v,
        y: &y0,
        w: None,
        spec,
        constants: &setup.constants,
        mu: &mu0,
        times: &setup.times,
    };
    let entry = majorant_i_n(&input, &params)?;
    let alphas = entry.alphas.first().copied().unwrap_or([3.0 / p.delta; 3]);
    // a vanishing residual term gives α = ∞; the constants need finite α
    let alphas = if alphas.iter().all(|a| a.is_finite()) { alphas } else { [3.0 / p.delta; 3] };
    let constants = equivalence_constants(&setup.constants, alphas, p, spec)?;
    Ok(EquivalenceDiagnostic { alphas, majorant_i_n: entry.value, constants })
}

/// Error measure of u − v under given weights.
pub fn measure(setup: &Setup, spec: &ProblemSpec, exact: &ManufacturedProblem, weights: &MeasureWeights, order: usize) -> Result<MeasureTerms> {
    let e = Difference(&exact.exact, &setup.v as &dyn ScalarField);
    error_measure(&setup.part, &e, weights, spec, &setup.times, QuadratureOrder { space: order, time: 3 })
}
