//! Run configuration files.

use std::path::Path;
use std::sync::Arc;

use majorant_core::bounds::{AlphaChoice, MajorantParams, MinorantParams};
use majorant_core::constants::{ConstantStrategy, ORACLE_GRID};
use majorant_core::mesh::{BoundaryKind, DomainSpec, Geometry, SideSpec};
use majorant_core::pipeline::{Settings, WChoice};
use majorant_core::problems::{
    manufactured_problem, Coefficients, FluxMethod, ManufacturedId, ManufacturedProblem, MatrixFn, PointFn, ProblemData,
    ProblemSpec,
};
use majorant_core::fields::SpaceTimeFn;
use majorant_core::residuals::MuStrategy;
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::expr::Expr;

/// Printed by `--print-default-config`; parses to `RunConfig::default()`.
pub const DEFAULT_CONFIG: &str = r#"# Identifier copied into every report row.
id = "run"

[problem]
# Built-in problem with a known solution: "mp1", "mp2" or "mp3".
# Replace with a [problem.inline] table to give the data directly:
#
#   [problem.inline]
#   name = "plate"
#   horizon = 1.0
#   geometry = { type = "box", lower = [0.0, 0.0], upper = [1.0, 1.0] }
#   # or: geometry = { type = "polygon", vertices = [[0,0], [1,0], [0,1]] }
#   # Box sides: x1 = lower, x1 = upper, x2 = lower, ...; polygon side k runs
#   # from vertex k to vertex k + 1. A side is a kind or a table with patches
#   # (coord is 0-based, the patch kind applies where coord lies in [lo, hi]).
#   sides = ["dirichlet", "dirichlet", "robin",
#            { kind = "robin", patches = [{ coord = 0, lo = 0.0, hi = 0.5, kind = "dirichlet" }] }]
#   # Expressions in x, y, z, t with sin, cos, exp, sqrt, ln, abs, ..., pi,
#   # ^ for powers and if(cond, a, b).
#   diffusion = "1"            # scalar a (A = a I) or d*d entries, row by row
#   reaction = "1"             # the coefficient whose square multiplies u
#   robin = "1"                # likewise on the Robin part
#   lambda_min = 1.0           # bounds on the eigenvalues of A
#   lambda_max = 1.0
#   reaction_bound = 1.0       # bound on |reaction|
#   robin_bound = 1.0          # bound on |robin|
#   source = "0"               # f(x, t)
#   boundary = "0"             # F(x, t) on the Robin part
#   initial = "0"              # u0(x)
manufactured = "mp1"

[mesh]
# Cells per axis (edge divisions for polygons).
resolution = 4
time_steps = 4
# Cells whose reaction coefficient reaches this value count as strong.
# Omitted: a tenth of the largest reaction value.
# threshold = 0.1

[parameters]
# delta in (0, 2], gamma >= 1/2, rho1 and rho2 >= 1, epsilon >= 1.
delta = 1.0
gamma = 1.0
rho1 = 2.0
rho2 = 2.0
epsilon = 2.0
# "per_slab", "constant" or a fixed triple [a1, a2, a3].
alphas = "per_slab"
# "indicator_OP", "zero" or "scan".
mu = "indicator_OP"
# Relative tolerance of the mean-value checks.
tolerance = 1e-9
# Gauss points per axis of the spatial quadrature.
quadrature_order = 4

[minorant]
# kappa = [k1, k2, k3, k4, k5]; omitted: matched to the decomposed majorant.
time_order = 3

[constants]
# "closed_form", "oracle" or "hybrid".
strategy = "hybrid"
oracle_grid = 64

[approximation]
# "reference_solver" or "exact_interpolant" (built-in problems only).
v = "reference_solver"
# Starting flux: "gradient_average" or "exact_projection" (built-in only).
y = "gradient_average"

[flux]
# "local_lift" enforces the mean-value conditions, "gradient_average" does not.
method = "local_lift"
# w in the second majorant: "zero" or "exact_interpolant".
w = "zero"
# Outer iterations of the flux optimizer (0 disables it) and CG steps each.
optimizer_iterations = 10
cg_steps = 50

[output]
# Adds the wall time to reports; switch off for bit-identical output.
timing = true
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub id: String,
    pub problem: ProblemConfig,
    pub mesh: MeshConfig,
    pub parameters: ParameterConfig,
    pub minorant: MinorantConfig,
    pub constants: ConstantConfig,
    pub approximation: ApproximationConfig,
    pub flux: FluxConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            id: "run".into(),
            problem: ProblemConfig::default(),
            mesh: MeshConfig::default(),
            parameters: ParameterConfig::default(),
            minorant: MinorantConfig::default(),
            constants: ConstantConfig::default(),
            approximation: ApproximationConfig::default(),
            flux: FluxConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manufactured: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<InlineProblem>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { manufactured: Some("mp1".into()), inline: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SideSetting {
    Kind(BoundaryKind),
    Spec(SideSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiffusionSetting {
    Scalar(String),
    Matrix(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    #[serde(default = "inline_name")]
    pub name: String,
    pub horizon: f64,
    pub geometry: Geometry,
    pub sides: Vec<SideSetting>,
    pub diffusion: DiffusionSetting,
    pub reaction: String,
    pub robin: String,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub reaction_bound: f64,
    pub robin_bound: f64,
    pub source: String,
    pub boundary: String,
    pub initial: String,
}

fn inline_name() -> String {
    "inline".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub resolution: usize,
    pub time_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { resolution: 4, time_steps: 4, threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSetting {
    Named(String),
    Fixed([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterConfig {
    pub delta: f64,
    pub gamma: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub epsilon: f64,
    pub alphas: AlphaSetting,
    pub mu: MuStrategy,
    pub tolerance: f64,
    pub quadrature_order: usize,
}

impl Default for ParameterConfig {
    fn default() -> Self {
        let p = MajorantParams::default();
        Self {
            delta: p.delta,
            gamma: p.gamma,
            rho1: p.rho1,
            rho2: p.rho2,
            epsilon: p.epsilon,
            alphas: AlphaSetting::Named("per_slab".into()),
            mu: MuStrategy::IndicatorOp,
            tolerance: p.mean_tol,
            quadrature_order: p.order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinorantConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<[f64; 5]>,
    pub time_order: usize,
}

impl Default for MinorantConfig {
    fn default() -> Self {
        Self { kappa: None, time_order: MinorantParams::default().time_order }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantConfig {
    pub strategy: ConstantStrategy,
    pub oracle_grid: usize,
}

impl Default for ConstantConfig {
    fn default() -> Self {
        Self { strategy: ConstantStrategy::Hybrid, oracle_grid: ORACLE_GRID }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VChoice {
    #[default]
    ReferenceSolver,
    ExactInterpolant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum YStart {
    #[default]
    GradientAverage,
    ExactProjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ApproximationConfig {
    pub v: VChoice,
    pub y: YStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluxConfig {
    pub method: FluxMethod,
    pub w: WChoice,
    pub optimizer_iterations: usize,
    pub cg_steps: usize,
}

impl Default for FluxConfig {
    fn default() -> Self {
        let s = Settings::default();
        Self { method: s.flux, w: s.w, optimizer_iterations: s.optimizer_iterations, cg_steps: s.cg_steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub timing: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { timing: true }
    }
}

/// The problem a configuration refers to.
pub enum Problem {
    Manufactured(Box<ManufacturedProblem>),
    Inline(Box<ProblemSpec>),
}

impl Problem {
    pub fn spec(&self) -> &ProblemSpec {
        match self {
            Problem::Manufactured(mp) => &mp.spec,
            Problem::Inline(spec) => spec,
        }
    }

    pub fn exact(&self) -> Option<&ManufacturedProblem> {
        match self {
            Problem::Manufactured(mp) => Some(mp),
            Problem::Inline(_) => None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Pipeline settings; also validates every parameter range.
    pub fn settings(&self) -> Result<Settings, CliError> {
        let p = &self.parameters;
        let alphas = match &p.alphas {
            AlphaSetting::Named(s) if s == "per_slab" => AlphaChoice::PerSlab,
            AlphaSetting::Named(s) if s == "constant" => AlphaChoice::Constant,
            AlphaSetting::Named(s) => {
                return Err(CliError::Config(format!(
                    "alphas = \"{s}\": expected \"per_slab\", \"constant\" or a triple"
                )))
            }
            AlphaSetting::Fixed(a) => AlphaChoice::Fixed(*a),
        };
        if !(p.tolerance > 0.0) || !p.tolerance.is_finite() {
            return Err(CliError::Config(format!("tolerance = {} must be positive", p.tolerance)));
        }
        if p.quadrature_order == 0 {
            return Err(CliError::Config("quadrature_order must be at least 1".into()));
        }
        let majorant = MajorantParams {
            delta: p.delta,
            gamma: p.gamma,
            rho1: p.rho1,
            rho2: p.rho2,
            epsilon: p.epsilon,
            alphas,
            mean_tol: p.tolerance,
            order: p.quadrature_order,
        };
        let minorant = self.minorant.kappa.map(|kappa| MinorantParams {
            kappa,
            time_order: self.minorant.time_order,
            order: p.quadrature_order,
        });
        let s = Settings {
            resolution: self.mesh.resolution,
            time_steps: self.mesh.time_steps,
            threshold: self.mesh.threshold,
            majorant,
            minorant,
            mu: p.mu,
            constants: self.constants.strategy,
            oracle_grid: self.constants.oracle_grid,
            flux: self.flux.method,
            w: self.flux.w,
            optimizer_iterations: self.flux.optimizer_iterations,
            cg_steps: self.flux.cg_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        let problem = match (&self.problem.manufactured, &self.problem.inline) {
            (Some(id), None) => Problem::Manufactured(Box::new(manufactured_problem(id.parse::<ManufacturedId>()?))),
            (None, Some(inline)) => Problem::Inline(Box::new(inline.compile()?)),
            _ => return Err(CliError::Config("[problem] needs exactly one of `manufactured` or `inline`".into())),
        };
        let needs_exact = self.approximation.v == VChoice::ExactInterpolant
            || self.approximation.y == YStart::ExactProjection
            || self.flux.w == WChoice::ExactInterpolant;
        if needs_exact && problem.exact().is_none() {
            return Err(CliError::Config("exact approximation choices need a manufactured problem".into()));
        }
        Ok(problem)
    }
}

impl InlineProblem {
    pub fn compile(&self) -> Result<ProblemSpec, CliError> {
        let sides = self
            .sides
            .iter()
            .map(|s| match s {
                SideSetting::Kind(k) => SideSpec::uniform(*k),
                SideSetting::Spec(s) => s.clone(),
            })
            .collect();
        let domain = DomainSpec { geometry: self.geometry.clone(), sides };
        let dim = domain.dim();
        let diffusion: MatrixFn = match &self.diffusion {
            DiffusionSetting::Scalar(s) => {
                let a = Expr::parse(s)?;
                Arc::new(move |x| {
                    let mut m = Matrix3::identity();
                    for k in 0..dim {
                        m[(k, k)] = a.eval(x, 0.0);
                    }
                    m
                })
            }
            DiffusionSetting::Matrix(entries) => {
                if entries.len() != dim * dim {
                    return Err(CliError::Config(format!(
                        "diffusion needs {} entries for a {dim}-dimensional domain, got {}",
                        dim * dim,
                        entries.len()
                    )));
                }
                let a = entries.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>, _>>()?;
                Arc::new(move |x| {
                    let mut m = Matrix3::identity();
                    for i in 0..dim {
                        for j in 0..dim {
                            m[(i, j)] = a[i * dim + j].eval(x, 0.0);
                        }
                    }
                    m
                })
            }
        };
        let point_fn = |s: &str| -> Result<PointFn, CliError> {
            let e = Expr::parse(s)?;
            Ok(Arc::new(move |x| e.eval(x, 0.0)))
        };
        let space_time_fn = |s: &str| -> Result<SpaceTimeFn, CliError> {
            let e = Expr::parse(s)?;
            Ok(Arc::new(move |x, t| e.eval(x, t)))
        };
        let spec = ProblemSpec {
            name: self.name.clone(),
            domain,
            horizon: self.horizon,
            coefficients: Coefficients {
                diffusion,
                reaction: point_fn(&self.reaction)?,
                robin: point_fn(&self.robin)?,
                lambda_min: self.lambda_min,
                lambda_max: self.lambda_max,
                reaction_bound: self.reaction_bound,
                robin_bound: self.robin_bound,
            },
            data: ProblemData {
                source: space_time_fn(&self.source)?,
                boundary: space_time_fn(&self.boundary)?,
                initial: point_fn(&self.initial)?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_text_matches_defaults() {
        let parsed = RunConfig::from_toml(DEFAULT_CONFIG).unwrap();
        assert_eq!(parsed, RunConfig::default());
        assert_eq!(parsed.settings().unwrap(), Settings::default());
    }

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[mesh]\nresolutoin = 3").is_err());
    }

    #[test]
    fn parameter_ranges_are_checked() {
        let c = RunConfig::from_toml("[parameters]\ndelta = 3.0").unwrap();
        let e = c.settings().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("(0, 2]"), "{e}");
        let c = RunConfig::from_toml("[parameters]\nalphas = [3.0, 3.0, 3.0]").unwrap();
        assert!(matches!(c.settings().unwrap().majorant.alphas, AlphaChoice::Fixed(_)));
        let c = RunConfig::from_toml("[parameters]\nalphas = \"sometimes\"").unwrap();
        assert_eq!(c.settings().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn inline_problem_compiles() {
        let text = r#"
            [problem.inline]
            horizon = 0.5
            geometry = { type = "box", lower = [0.0, 0.0], upper = [1.0, 1.0] }
            sides = ["dirichlet", "robin", "robin", { kind = "robin", patches = [{ coord = 0, lo = 0.0, hi = 0.5, kind = "dirichlet" }] }]
            diffusion = ["1 + x", "0", "0", "2"]
            reaction = "if(x > 0.5, 10, 0)"
            robin = "1"
            lambda_min = 1.0
            lambda_max = 2.0
            reaction_bound = 10.0
            robin_bound = 1.0
            source = "exp(-t)*sin(pi*x)"
            boundary = "0"
            initial = "x*(1 - x)"
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        let p = c.problem().unwrap();
        let spec = p.spec();
        assert!(p.exact().is_none());
        let x = majorant_core::mesh::Point::new(0.75, 0.5, 0.0);
        assert_eq!((spec.coefficients.diffusion)(&x)[(0, 0)], 1.75);
        assert_eq!((spec.coefficients.reaction)(&x), 10.0);
        assert!(((spec.data.initial)(&x) - 0.1875).abs() < 1e-15);
        assert_eq!(spec.domain.sides[3].patches.len(), 1);
    }

    #[test]
    fn exact_choices_need_a_manufactured_problem() {
        let text = r#"
            [problem.inline]
            horizon = 1.0
            geometry = { type = "box", lower = [0.0, 0.0], upper = [1.0, 1.0] }
            sides = ["dirichlet", "dirichlet", "robin", "robin"]
            diffusion = "1"
            reaction = "1"
            robin = "1"
            lambda_min = 1.0
            lambda_max = 1.0
            reaction_bound = 1.0
            robin_bound = 1.0
            source = "1"
            boundary = "0"
            initial = "0"
            [approximation]
            v = "exact_interpolant"
        "#;
        let e = RunConfig::from_toml(text).unwrap().problem().err().unwrap();
        assert_eq!(e.exit_code(), 2);
    }
}
