//! Problem instances, manufactured solutions, a reference solver producing
//! approximations v and flux reconstructions y.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, DEFAULT_ORDER};
use crate::fields::{
    integrate, integrate_at, At, AnalyticScalar, AnalyticVector, Difference, FluxField, QuadratureOrder, Region,
    ScalarField, SpaceTimeFn, SpaceTimeField, TimeGrid,
};
use crate::linalg::{add_scaled, restrict, spmv, SpdSolver};
use crate::mesh::{BoundaryKind, DomainSpec, Partition, Point};
use crate::residuals::{enforce_mean_zero, MuField};

pub type PointFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&Point) -> Matrix3<f64> + Send + Sync>;

/// A, ϱ, σ with their bounds. `diffusion` returns the d×d block padded with
/// the identity.
#[derive(Clone)]
pub struct Coefficients {
    pub diffusion: MatrixFn,
    pub reaction: PointFn,
    pub robin: PointFn,
    /// Lower ellipticity bound λ̲_A.
    pub lambda_min: f64,
    /// Upper bound λ̄_A.
    pub lambda_max: f64,
    /// Bound C_ϱ on |ϱ|.
    pub reaction_bound: f64,
    /// Bound C_σ on |σ|.
    pub robin_bound: f64,
}

/// f on Q_T, F on S_R and u₀.
#[derive(Clone)]
pub struct ProblemData {
    pub source: SpaceTimeFn,
    pub boundary: SpaceTimeFn,
    pub initial: PointFn,
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: DomainSpec,
    pub horizon: f64,
    pub coefficients: Coefficients,
    pub data: ProblemData,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("horizon", &self.horizon)
            .field("lambda_min", &self.coefficients.lambda_min)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let c = &self.coefficients;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(c.lambda_min > 0.0) || !(c.lambda_max >= c.lambda_min) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < λ_min ≤ λ_max, got {} and {}",
                c.lambda_min, c.lambda_max
            )));
        }
        if !(c.reaction_bound >= 0.0) || !(c.robin_bound >= 0.0) {
            return Err(Error::InvalidParameter("coefficient bounds must be non-negative".into()));
        }
        Ok(())
    }

    /// Samples the coefficients at the quadrature nodes of `part` and checks
    /// the declared ellipticity and boundedness constants.
    pub fn check_coefficients(&self, part: &Partition) -> Result<()> {
        let c = &self.coefficients;
        let slack = 1e-10;
        for cell in &part.subdomains {
            for (x, _) in cell.quadrature(3) {
                let a = (c.diffusion)(&x);
                let block = a.view((0, 0), (part.dim, part.dim)).into_owned();
                if (block.clone() - block.transpose()).abs().max() > 1e-12 * (1.0 + block.abs().max()) {
                    return Err(Error::Hypothesis(format!("diffusion matrix is not symmetric at {x:?}")));
                }
                let eig = SymmetricEigen::new(block).eigenvalues;
                let (lo, hi) = (eig.min(), eig.max());
                if lo < c.lambda_min * (1.0 - slack) || hi > c.lambda_max * (1.0 + slack) {
                    return Err(Error::Hypothesis(format!(
                        "eigenvalues [{lo}, {hi}] of A at ({:.4}, {:.4}, {:.4}) leave [{}, {}]",
                        x.x, x.y, x.z, c.lambda_min, c.lambda_max
                    )));
                }
                let r = (c.reaction)(&x);
                if !(r >= 0.0) || r > c.reaction_bound * (1.0 + slack) {
                    return Err(Error::Hypothesis(format!("reaction coefficient {r} outside [0, {}]", c.reaction_bound)));
                }
            }
        }
        for &f in &part.robin_faces {
            for (x, _) in part.faces[f].quadrature(&part.nodes, 3) {
                let s = (c.robin)(&x);
                if !(s >= 0.0) || s > c.robin_bound * (1.0 + slack) {
                    return Err(Error::Hypothesis(format!("Robin coefficient {s} outside [0, {}]", c.robin_bound)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManufacturedId {
    Mp1,
    Mp2,
    Mp3,
}

impl FromStr for ManufacturedId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mp1" => Ok(Self::Mp1),
            "mp2" => Ok(Self::Mp2),
            "mp3" => Ok(Self::Mp3),
            _ => Err(Error::InvalidParameter(format!("unknown manufactured problem '{s}' (expected mp1, mp2 or mp3)"))),
        }
    }
}

impl fmt::Display for ManufacturedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Mp1 => "mp1",
            Self::Mp2 => "mp2",
            Self::Mp3 => "mp3",
        };
        f.write_str(s)
    }
}

/// A problem with a known solution u and flux p = A∇u.
#[derive(Clone)]
pub struct ManufacturedProblem {
    pub id: ManufacturedId,
    pub spec: ProblemSpec,
    pub exact: AnalyticScalar,
    pub flux: AnalyticVector,
}

fn diag2(a: f64, b: f64) -> Matrix3<f64> {
    Matrix3::new(a, 0.0, 0.0, 0.0, b, 0.0, 0.0, 0.0, 1.0)
}

pub fn manufactured_problem(id: ManufacturedId) -> ManufacturedProblem {
    match id {
        ManufacturedId::Mp1 => mp1(),
        ManufacturedId::Mp2 => mp2(),
        ManufacturedId::Mp3 => mp3(),
    }
}

/// u = e^{-t} sin(πx)(1 + y²) on the unit square, A = I, ϱ = σ = 1,
/// Dirichlet on x ∈ {0, 1}, Robin on y ∈ {0, 1}.
fn mp1() -> ManufacturedProblem {
    use BoundaryKind::{Dirichlet as D, Robin as R};
    let u = |x: &Point, t: f64| (-t).exp() * (PI * x.x).sin() * (1.0 + x.y * x.y);
    let grad = |x: &Point, t: f64| {
        let e = (-t).exp();
        Point::new(e * PI * (PI * x.x).cos() * (1.0 + x.y * x.y), e * (PI * x.x).sin() * 2.0 * x.y, 0.0)
    };
    // −Δu = π²u − 2e^{-t}sin(πx), u_t = −u, ϱ²u = u.
    let f = move |x: &Point, t: f64| PI * PI * u(x, t) - 2.0 * (-t).exp() * (PI * x.x).sin();
    // ∇u·n + u: on y = 0 the normal derivative vanishes and u = e^{-t}sin(πx);
    // on y = 1, ∂_y u = 2e^{-t}sin(πx) and u = 2e^{-t}sin(πx).
    let big_f = |x: &Point, t: f64| {
        let s = (-t).exp() * (PI * x.x).sin();
        if x.y > 0.5 {
            4.0 * s
        } else {
            s
        }
    };
    let spec = ProblemSpec {
        name: "mp1".into(),
        domain: DomainSpec::rectangle([0.0, 0.0], [1.0, 1.0], [D, D, R, R]),
        horizon: 1.0,
        coefficients: Coefficients {
            diffusion: Arc::new(|_| Matrix3::identity()),
            reaction: Arc::new(|_| 1.0),
            robin: Arc::new(|_| 1.0),
            lambda_min: 1.0,
            lambda_max: 1.0,
            reaction_bound: 1.0,
            robin_bound: 1.0,
        },
        data: ProblemData { source: Arc::new(f), boundary: Arc::new(big_f), initial: Arc::new(move |x| u(x, 0.0)) },
    };
    ManufacturedProblem {
        id: ManufacturedId::Mp1,
        spec,
        exact: AnalyticScalar { value: Arc::new(u), grad: Arc::new(grad), dt: Arc::new(move |x, t| -u(x, t)) },
        flux: AnalyticVector {
            value: Arc::new(grad),
            div: Arc::new(move |x, t| -PI * PI * u(x, t) + 2.0 * (-t).exp() * (PI * x.x).sin()),
        },
    }
}

/// Same u as the first problem with A = diag(1 + x, 2) and ϱ = 10 on x > ½.
fn mp2() -> ManufacturedProblem {
    let base = mp1();
    let u = |x: &Point, t: f64| (-t).exp() * (PI * x.x).sin() * (1.0 + x.y * x.y);
    let rho = |x: &Point| if x.x > 0.5 { 10.0f64 } else { 0.0 };
    let grad = base.exact.grad.clone();
    let g2 = grad.clone();
    let flux = move |x: &Point, t: f64| {
        let g = g2(x, t);
        Point::new((1.0 + x.x) * g.x, 2.0 * g.y, 0.0)
    };
    // div p = u_x + (1+x)u_xx + 2u_yy.
    let div = move |x: &Point, t: f64| {
        let e = (-t).exp();
        let q = 1.0 + x.y * x.y;
        e * (PI * (PI * x.x).cos() * q - (1.0 + x.x) * PI * PI * (PI * x.x).sin() * q + 4.0 * (PI * x.x).sin())
    };
    let f = move |x: &Point, t: f64| -u(x, t) - div(x, t) + rho(x).powi(2) * u(x, t);
    // −2∂_y u + u = e^{-t}sin(πx) on y = 0; 2∂_y u + u = 6e^{-t}sin(πx) on y = 1.
    let big_f = |x: &Point, t: f64| {
        let s = (-t).exp() * (PI * x.x).sin();
        if x.y > 0.5 {
            6.0 * s
        } else {
            s
        }
    };
    let mut spec = base.spec;
    spec.name = "mp2".into();
    spec.coefficients = Coefficients {
        diffusion: Arc::new(|x| diag2(1.0 + x.x, 2.0)),
        reaction: Arc::new(rho),
        robin: Arc::new(|_| 1.0),
        lambda_min: 1.0,
        lambda_max: 2.0,
        reaction_bound: 10.0,
        robin_bound: 1.0,
    };
    spec.data.source = Arc::new(f);
    spec.data.boundary = Arc::new(big_f);
    ManufacturedProblem {
        id: ManufacturedId::Mp2,
        spec,
        exact: base.exact,
        flux: AnalyticVector { value: Arc::new(flux), div: Arc::new(div) },
    }
}

/// u = t·xy(1 − x − y) on the unit right triangle, A = [[2, ½], [½, 1]],
/// ϱ = 1, σ = 2, Dirichlet on y = 0 and Robin on the other two sides.
fn mp3() -> ManufacturedProblem {
    use BoundaryKind::{Dirichlet as D, Robin as R};
    let a = Matrix3::new(2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0);
    let g = |x: &Point| x.x * x.y * (1.0 - x.x - x.y);
    let gg = |x: &Point| {
        Point::new(x.y - 2.0 * x.x * x.y - x.y * x.y, x.x - x.x * x.x - 2.0 * x.x * x.y, 0.0)
    };
    let u = move |x: &Point, t: f64| t * g(x);
    let grad = move |x: &Point, t: f64| gg(x) * t;
    let flux = move |x: &Point, t: f64| a * gg(x) * t;
    // div(A∇g) = 2g_xx + g_xy + g_yy = 1 − 4x − 6y.
    let div = |x: &Point, t: f64| t * (1.0 - 4.0 * x.x - 6.0 * x.y);
    let f = move |x: &Point, t: f64| g(x) - div(x, t) + u(x, t);
    // u vanishes on both Robin sides: on x = 0 the conormal derivative is
    // −(A∇u)_x = −2ty(1−y); on the hypotenuse it is −2√2·txy.
    let big_f = |x: &Point, t: f64| {
        if x.x < 1e-12 {
            -2.0 * t * x.y * (1.0 - x.y)
        } else {
            -2.0 * 2f64.sqrt() * t * x.x * x.y
        }
    };
    let s2 = 2f64.sqrt();
    let spec = ProblemSpec {
        name: "mp3".into(),
        domain: DomainSpec::polygon(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![D, R, R]),
        horizon: 1.0,
        coefficients: Coefficients {
            diffusion: Arc::new(move |_| a),
            reaction: Arc::new(|_| 1.0),
            robin: Arc::new(|_| 2.0),
            lambda_min: (3.0 - s2) / 2.0,
            lambda_max: (3.0 + s2) / 2.0,
            reaction_bound: 1.0,
            robin_bound: 2.0,
        },
        data: ProblemData { source: Arc::new(f), boundary: Arc::new(big_f), initial: Arc::new(|_| 0.0) },
    };
    ManufacturedProblem {
        id: ManufacturedId::Mp3,
        spec,
        exact: AnalyticScalar { value: Arc::new(u), grad: Arc::new(grad), dt: Arc::new(move |x, _| g(x)) },
        flux: AnalyticVector { value: Arc::new(flux), div: Arc::new(div) },
    }
}

impl ManufacturedProblem {
    /// Strong-form residuals (interior equation, Robin condition) of the exact
    /// solution at a point; `normal` is used for the boundary one.
    pub fn strong_residuals(&self, x: &Point, t: f64, normal: &Point) -> (f64, f64) {
        let c = &self.spec.coefficients;
        let u = (self.exact.value)(x, t);
        let interior =
            (self.exact.dt)(x, t) - (self.flux.div)(x, t) + (c.reaction)(x).powi(2) * u - (self.spec.data.source)(x, t);
        let boundary = (self.flux.value)(x, t).dot(normal) + (c.robin)(x).powi(2) * u - (self.spec.data.boundary)(x, t);
        (interior, boundary)
    }

    /// Nodal interpolant of u in V₀.
    pub fn interpolant(&self, part: Arc<Partition>, times: TimeGrid) -> SpaceTimeField {
        let u = self.exact.value.clone();
        SpaceTimeField::interpolate(part, times, &move |x, t| u(x, t))
    }
}

/// Backward Euler in time with the nodal space of `part` in space.
pub fn reference_solver(spec: &ProblemSpec, part: Arc<Partition>, times: &TimeGrid) -> Result<SpaceTimeField> {
    spec.validate()?;
    let c = &spec.coefficients;
    let n = part.n_nodes();
    let order = DEFAULT_ORDER;
    let m = fem::mass(&part, &|_| 1.0, order);
    let k = fem::stiffness(&part, &*c.diffusion, order);
    let r = fem::mass(&part, &|x| (c.reaction)(x).powi(2), order);
    let b = fem::boundary_mass(&part, &part.robin_faces, &|x| (c.robin)(x).powi(2), order);
    let operator = add_scaled(&add_scaled(&k, 1.0, &r, 1.0), 1.0, &b, 1.0);

    let mut index = vec![None; n];
    let mut free = Vec::new();
    for i in 0..n {
        if !part.dirichlet_nodes[i] {
            index[i] = Some(free.len());
            free.push(i);
        }
    }
    let gather = |v: &DVector<f64>| DVector::from_iterator(free.len(), free.iter().map(|&i| v[i]));

    let initial = &spec.data.initial;
    let mut current = DVector::from_iterator(
        n,
        part.nodes.iter().zip(&part.dirichlet_nodes).map(|(x, &d)| if d { 0.0 } else { initial(x) }),
    );
    let mut values = vec![current.clone()];
    let mut cached: Option<(f64, SpdSolver)> = None;
    for j in 0..times.n_slabs() {
        let dt = times.slab_length(j);
        let t = times.nodes()[j + 1];
        if cached.as_ref().is_none_or(|(h, _)| (h - dt).abs() > 1e-14 * dt) {
            let system = restrict(&add_scaled(&m, 1.0, &operator, dt), &index, free.len());
            cached = Some((dt, SpdSolver::new(&system)?));
        }
        let solver = &cached.as_ref().unwrap().1;
        let source = fem::load(&part, &|x| (spec.data.source)(x, t), order);
        let boundary = fem::boundary_load(&part, &part.robin_faces, &|x| (spec.data.boundary)(x, t), order);
        let rhs = spmv(&m, &current) + (source + boundary) * dt;
        let x = solver.solve(&gather(&rhs))?;
        let mut next = DVector::zeros(n);
        for (k, &i) in free.iter().enumerate() {
            next[i] = x[k];
        }
        current = next;
        values.push(current.clone());
    }
    SpaceTimeField::new(part, times.clone(), values)
}

/// Face-normal degrees of freedom from A∇v averaged over the cells sharing
/// each face, at the flux storage times.
pub fn gradient_average_flux(v: &SpaceTimeField, spec: &ProblemSpec) -> FluxField {
    let part = v.partition().clone();
    let a = spec.coefficients.diffusion.clone();
    FluxField::from_fn(part.clone(), v.times().clone(), &|face, t| {
        let mut sum = 0.0;
        for &c in &face.cells {
            let at = At { cell: c, x: face.centroid, t };
            sum += (a(&at.x) * v.grad(&at)).dot(&face.normal);
        }
        sum / face.cells.len() as f64
    })
}

/// How the initial flux y is built from v.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FluxMethod {
    GradientAverage,
    /// Gradient average followed by the mean-value correction.
    #[default]
    LocalLift,
}

impl FromStr for FluxMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gradient_average" => Ok(Self::GradientAverage),
            "local_lift" => Ok(Self::LocalLift),
            other => Err(Error::InvalidParameter(format!(
                "unknown flux method '{other}' (expected gradient_average or local_lift)"
            ))),
        }
    }
}

pub fn flux_reconstruction(
    v: &SpaceTimeField,
    spec: &ProblemSpec,
    method: FluxMethod,
    mu: &MuField,
) -> Result<FluxField> {
    let y = gradient_average_flux(v, spec);
    match method {
        FluxMethod::GradientAverage => Ok(y),
        FluxMethod::LocalLift => Ok(enforce_mean_zero(&y, v, None, spec, mu, DEFAULT_ORDER)?.0),
    }
}

/// |LHS − RHS| of the basic error identity for e = u − v:
/// ∫‖∇e‖²_A + ∫‖ϱe‖² + ½‖e(T)‖² + ∫‖σe‖²_{Γ_R}
///   = ∫(f − v_t − ϱ²v)e − ∫A∇v·∇e + ∫_{S_R}(F − σ²v)e + ½‖e(0)‖².
pub fn error_identity_check(
    part: &Partition,
    v: &dyn ScalarField,
    exact: &ManufacturedProblem,
    times: &TimeGrid,
    q: QuadratureOrder,
) -> f64 {
    let spec = &exact.spec;
    let c = &spec.coefficients;
    let e = Difference(&exact.exact, v);
    let lhs_volume = integrate(part, Region::Domain, times, q, &mut |at| {
        let g = e.grad(at);
        let ev = e.value(at);
        ((c.diffusion)(&at.x) * g).dot(&g) + ((c.reaction)(&at.x) * ev).powi(2)
    });
    let lhs_robin =
        integrate(part, Region::Faces(&part.robin_faces), times, q, &mut |at| ((c.robin)(&at.x) * e.value(at)).powi(2));
    let terminal = 0.5 * integrate_at(part, Region::Domain, times.horizon(), q.space, &mut |at| e.value(at).powi(2));
    let initial = 0.5 * integrate_at(part, Region::Domain, 0.0, q.space, &mut |at| e.value(at).powi(2));
    let rhs_volume = integrate(part, Region::Domain, times, q, &mut |at| {
        let r = (spec.data.source)(&at.x, at.t) - v.dt(at) - (c.reaction)(&at.x).powi(2) * v.value(at);
        r * e.value(at) - ((c.diffusion)(&at.x) * v.grad(at)).dot(&e.grad(at))
    });
    let rhs_robin = integrate(part, Region::Faces(&part.robin_faces), times, q, &mut |at| {
        ((spec.data.boundary)(&at.x, at.t) - (c.robin)(&at.x).powi(2) * v.value(at)) * e.value(at)
    });
    ((lhs_volume + lhs_robin + terminal) - (rhs_volume + rhs_robin + initial)).abs()
}
