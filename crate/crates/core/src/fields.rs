//! Scalar and flux fields on a space–time grid, quadrature-based norms and
//! the error measures.

use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{flux_basis, inverse_block, scalar_basis};
use crate::linalg::KahanSum;
use crate::mesh::{Face, Partition, Point};
use crate::problems::ProblemSpec;
use crate::quadrature::gauss_unit;

/// Gauss points of the two-point rule on [0, 1]; fluxes are stored there.
pub fn flux_time_nodes() -> [f64; 2] {
    let s = 3f64.sqrt() / 6.0;
    [0.5 - s, 0.5 + s]
}

/// Increasing time nodes 0 = t_0 < … < t_n = T.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

/// A time quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePoint {
    pub slab: usize,
    pub t: f64,
    pub weight: f64,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("time nodes must increase from 0".into()));
        }
        Ok(Self { nodes })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "need a positive horizon and at least one step, got T = {horizon}, steps = {steps}"
            )));
        }
        let mut nodes: Vec<f64> = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
        nodes[steps] = horizon;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn n_slabs(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn slab_length(&self, slab: usize) -> f64 {
        self.nodes[slab + 1] - self.nodes[slab]
    }

    /// Slab containing `t` and the local coordinate in [0, 1].
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.n_slabs();
        let j = match self.nodes.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        };
        (j, (t - self.nodes[j]) / self.slab_length(j))
    }

    /// `n`-point Gauss rule on every slab.
    pub fn rule(&self, n: usize) -> Vec<TimePoint> {
        let g = gauss_unit(n);
        let mut out = Vec::with_capacity(self.n_slabs() * n);
        for j in 0..self.n_slabs() {
            let dt = self.slab_length(j);
            for &(s, w) in &g {
                out.push(TimePoint { slab: j, t: self.nodes[j] + s * dt, weight: w * dt });
            }
        }
        out
    }

    /// The two-point rule at which fluxes are stored and the majorants are
    /// evaluated.
    pub fn flux_points(&self) -> Vec<TimePoint> {
        self.rule(2)
    }
}

/// Evaluation point: a cell of the shared partition, a point in it and a time.
#[derive(Debug, Clone, Copy)]
pub struct At {
    pub cell: usize,
    pub x: Point,
    pub t: f64,
}

pub trait ScalarField: Send + Sync {
    fn value(&self, at: &At) -> f64;
    fn grad(&self, at: &At) -> Point;
    fn dt(&self, at: &At) -> f64;
    /// The partition a discrete field lives on.
    fn mesh(&self) -> Option<&Partition> {
        None
    }
}

pub trait VectorField: Send + Sync {
    fn value(&self, at: &At) -> Point;
    fn div(&self, at: &At) -> f64;
    fn mesh(&self) -> Option<&Partition> {
        None
    }
}

/// True when two partitions describe the same cells, nodes and faces.
pub fn same_mesh(a: &Partition, b: &Partition) -> bool {
    std::ptr::eq(a, b)
        || (a.n_nodes() == b.n_nodes()
            && a.n_cells() == b.n_cells()
            && a.n_faces() == b.n_faces()
            && a.nodes.iter().zip(&b.nodes).all(|(p, q)| (p - q).norm() <= 1e-12))
}

pub type SpaceTimeFn = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&Point, f64) -> Point + Send + Sync>;

/// Closed-form scalar field.
#[derive(Clone)]
pub struct AnalyticScalar {
    pub value: SpaceTimeFn,
    pub grad: VectorFn,
    pub dt: SpaceTimeFn,
}

impl ScalarField for AnalyticScalar {
    fn value(&self, at: &At) -> f64 {
        (self.value)(&at.x, at.t)
    }
    fn grad(&self, at: &At) -> Point {
        (self.grad)(&at.x, at.t)
    }
    fn dt(&self, at: &At) -> f64 {
        (self.dt)(&at.x, at.t)
    }
}

/// Closed-form vector field.
#[derive(Clone)]
pub struct AnalyticVector {
    pub value: VectorFn,
    pub div: SpaceTimeFn,
}

impl VectorField for AnalyticVector {
    fn value(&self, at: &At) -> Point {
        (self.value)(&at.x, at.t)
    }
    fn div(&self, at: &At) -> f64 {
        (self.div)(&at.x, at.t)
    }
}

/// The zero field (scalar and vector).
#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl ScalarField for Zero {
    fn value(&self, _: &At) -> f64 {
        0.0
    }
    fn grad(&self, _: &At) -> Point {
        Point::zeros()
    }
    fn dt(&self, _: &At) -> f64 {
        0.0
    }
}

impl VectorField for Zero {
    fn value(&self, _: &At) -> Point {
        Point::zeros()
    }
    fn div(&self, _: &At) -> f64 {
        0.0
    }
}

/// a − b for scalar fields.
pub struct Difference<'a>(pub &'a dyn ScalarField, pub &'a dyn ScalarField);

impl ScalarField for Difference<'_> {
    fn value(&self, at: &At) -> f64 {
        self.0.value(at) - self.1.value(at)
    }
    fn grad(&self, at: &At) -> Point {
        self.0.grad(at) - self.1.grad(at)
    }
    fn dt(&self, at: &At) -> f64 {
        self.0.dt(at) - self.1.dt(at)
    }
}

/// a − b for vector fields.
pub struct VectorDifference<'a>(pub &'a dyn VectorField, pub &'a dyn VectorField);

impl VectorField for VectorDifference<'_> {
    fn value(&self, at: &At) -> Point {
        self.0.value(at) - self.1.value(at)
    }
    fn div(&self, at: &At) -> f64 {
        self.0.div(at) - self.1.div(at)
    }
}

/// c·a for a scalar field.
pub struct Scaled<'a>(pub f64, pub &'a dyn ScalarField);

impl ScalarField for Scaled<'_> {
    fn value(&self, at: &At) -> f64 {
        self.0 * self.1.value(at)
    }
    fn grad(&self, at: &At) -> Point {
        self.1.grad(at) * self.0
    }
    fn dt(&self, at: &At) -> f64 {
        self.0 * self.1.dt(at)
    }
}

/// Continuous nodal field in space, piecewise linear in time.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    partition: Arc<Partition>,
    times: TimeGrid,
    values: Vec<DVector<f64>>,
}

impl SpaceTimeField {
    pub fn new(partition: Arc<Partition>, times: TimeGrid, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != times.nodes().len() || values.iter().any(|v| v.len() != partition.n_nodes()) {
            return Err(Error::Mismatch(format!(
                "expected {} time levels of {} nodal values",
                times.nodes().len(),
                partition.n_nodes()
            )));
        }
        Ok(Self { partition, times, values })
    }

    pub fn zeros(partition: Arc<Partition>, times: TimeGrid) -> Self {
        let values = vec![DVector::zeros(partition.n_nodes()); times.nodes().len()];
        Self { partition, times, values }
    }

    /// Nodal interpolant of `f` at every time node; Dirichlet nodes are set
    /// to zero so the result lies in V₀.
    pub fn interpolate(partition: Arc<Partition>, times: TimeGrid, f: &dyn Fn(&Point, f64) -> f64) -> Self {
        let values = times
            .nodes()
            .iter()
            .map(|&t| {
                DVector::from_iterator(
                    partition.n_nodes(),
                    partition
                        .nodes
                        .iter()
                        .zip(&partition.dirichlet_nodes)
                        .map(|(x, &d)| if d { 0.0 } else { f(x, t) }),
                )
            })
            .collect();
        Self { partition, times, values }
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Nodal values at time `t` (linear interpolation between levels).
    pub fn nodal_at(&self, t: f64) -> DVector<f64> {
        let (j, s) = self.times.locate(t);
        &self.values[j] * (1.0 - s) + &self.values[j + 1] * s
    }

    /// Largest absolute nodal value on the Dirichlet part.
    pub fn dirichlet_max(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| {
                v.iter()
                    .zip(&self.partition.dirichlet_nodes)
                    .filter(|(_, &d)| d)
                    .map(|(x, _)| x.abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    fn eval(&self, at: &At) -> (f64, Point, f64) {
        let cell = &self.partition.subdomains[at.cell];
        let b = scalar_basis(cell, &at.x);
        let (j, s) = self.times.locate(at.t);
        let dt = self.times.slab_length(j);
        let (lo, hi) = (&self.values[j], &self.values[j + 1]);
        let mut val = 0.0;
        let mut grad = Point::zeros();
        let mut rate = 0.0;
        for i in 0..b.n {
            let n = cell.nodes[i];
            let c = lo[n] * (1.0 - s) + hi[n] * s;
            val += c * b.values[i];
            grad += b.grads[i] * c;
            rate += (hi[n] - lo[n]) / dt * b.values[i];
        }
        (val, grad, rate)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nodes": self.partition.nodes.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>(),
            "times": self.times.nodes(),
            "values": self.values.iter().map(|v| v.as_slice().to_vec()).collect::<Vec<_>>(),
        })
    }
}

impl ScalarField for SpaceTimeField {
    fn mesh(&self) -> Option<&Partition> {
        Some(&self.partition)
    }
    fn value(&self, at: &At) -> f64 {
        self.eval(at).0
    }
    fn grad(&self, at: &At) -> Point {
        self.eval(at).1
    }
    fn dt(&self, at: &At) -> f64 {
        self.eval(at).2
    }
}

/// Lowest-order H(div) field: one normal-component value per face, stored
/// at the two Gauss points of every time slab and linear in time inside a
/// slab.
#[derive(Debug, Clone)]
pub struct FluxField {
    partition: Arc<Partition>,
    times: TimeGrid,
    dofs: Vec<DVector<f64>>,
}

impl FluxField {
    pub fn new(partition: Arc<Partition>, times: TimeGrid, dofs: Vec<DVector<f64>>) -> Result<Self> {
        if dofs.len() != 2 * times.n_slabs() || dofs.iter().any(|d| d.len() != partition.n_faces()) {
            return Err(Error::Mismatch(format!(
                "expected {} time points of {} face values",
                2 * times.n_slabs(),
                partition.n_faces()
            )));
        }
        Ok(Self { partition, times, dofs })
    }

    pub fn zeros(partition: Arc<Partition>, times: TimeGrid) -> Self {
        let dofs = vec![DVector::zeros(partition.n_faces()); 2 * times.n_slabs()];
        Self { partition, times, dofs }
    }

    /// Face values `f(face, t)` at every storage time.
    pub fn from_fn(partition: Arc<Partition>, times: TimeGrid, f: &dyn Fn(&Face, f64) -> f64) -> Self {
        let dofs = times
            .flux_points()
            .iter()
            .map(|tp| DVector::from_iterator(partition.n_faces(), partition.faces.iter().map(|face| f(face, tp.t))))
            .collect();
        Self { partition, times, dofs }
    }

    /// Normal components of a vector field at face centroids.
    pub fn project(partition: Arc<Partition>, times: TimeGrid, y: &dyn VectorField) -> Self {
        let p = partition.clone();
        Self::from_fn(partition, times, &|face, t| {
            let at = At { cell: face.cells[0], x: face.centroid, t };
            y.value(&at).dot(&face.normal)
        })
        .with_partition(p)
    }

    fn with_partition(mut self, p: Arc<Partition>) -> Self {
        self.partition = p;
        self
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    /// Values at storage point `k` (slab `k / 2`).
    pub fn dofs(&self) -> &[DVector<f64>] {
        &self.dofs
    }

    pub fn dofs_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.dofs
    }

    /// Face values at time `t`.
    pub fn dofs_at(&self, t: f64) -> DVector<f64> {
        let (j, s) = self.times.locate(t);
        let [g0, g1] = flux_time_nodes();
        let lam = (s - g0) / (g1 - g0);
        &self.dofs[2 * j] * (1.0 - lam) + &self.dofs[2 * j + 1] * lam
    }

    fn coefficients(&self, at: &At) -> Vec<f64> {
        let (j, s) = self.times.locate(at.t);
        let [g0, g1] = flux_time_nodes();
        let lam = (s - g0) / (g1 - g0);
        let cell = &self.partition.subdomains[at.cell];
        cell.faces
            .iter()
            .map(|&f| self.dofs[2 * j][f] * (1.0 - lam) + self.dofs[2 * j + 1][f] * lam)
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "times": self.times.flux_points().iter().map(|p| p.t).collect::<Vec<_>>(),
            "dofs": self.dofs.iter().map(|v| v.as_slice().to_vec()).collect::<Vec<_>>(),
        })
    }
}

impl VectorField for FluxField {
    fn mesh(&self) -> Option<&Partition> {
        Some(&self.partition)
    }
    fn value(&self, at: &At) -> Point {
        let q = self.coefficients(at);
        let b = flux_basis(&self.partition.subdomains[at.cell], &at.x);
        (0..b.n).map(|i| b.values[i] * q[i]).sum()
    }
    fn div(&self, at: &At) -> f64 {
        let q = self.coefficients(at);
        let b = flux_basis(&self.partition.subdomains[at.cell], &at.x);
        (0..b.n).map(|i| b.divs[i] * q[i]).sum()
    }
}

/// Quadrature orders: Gauss points per axis in space (per direction of the
/// collapsed rule on triangles) and per time slab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct QuadratureOrder {
    pub space: usize,
    pub time: usize,
}

impl Default for QuadratureOrder {
    fn default() -> Self {
        Self { space: 4, time: 2 }
    }
}

/// Where an integral is taken.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Domain,
    Cells(&'a [usize]),
    Faces(&'a [usize]),
}

/// ∫ g over `region` at a fixed time.
pub fn integrate_at(part: &Partition, region: Region, t: f64, order: usize, g: &mut dyn FnMut(&At) -> f64) -> f64 {
    let mut sum = KahanSum::new();
    let mut cell_loop = |c: usize, sum: &mut KahanSum| {
        for (x, w) in part.subdomains[c].quadrature(order) {
            sum.add(w * g(&At { cell: c, x, t }));
        }
    };
    match region {
        Region::Domain => {
            for c in 0..part.n_cells() {
                cell_loop(c, &mut sum);
            }
        }
        Region::Cells(cells) => {
            for &c in cells {
                cell_loop(c, &mut sum);
            }
        }
        Region::Faces(faces) => {
            for &f in faces {
                let face = &part.faces[f];
                for (x, w) in face.quadrature(&part.nodes, order) {
                    sum.add(w * g(&At { cell: face.cells[0], x, t }));
                }
            }
        }
    }
    sum.value()
}

/// ∫₀ᵀ ∫ g over `region`.
pub fn integrate(
    part: &Partition,
    region: Region,
    times: &TimeGrid,
    q: QuadratureOrder,
    g: &mut dyn FnMut(&At) -> f64,
) -> f64 {
    let mut sum = KahanSum::new();
    for tp in times.rule(q.time) {
        sum.add(tp.weight * integrate_at(part, region, tp.t, q.space, g));
    }
    sum.value()
}

/// ∫₀ᵀ ‖weight·field‖² over a region.
pub fn weighted_l2_norm_sq(
    part: &Partition,
    field: &dyn ScalarField,
    weight: &dyn Fn(&Point, f64) -> f64,
    region: Region,
    times: &TimeGrid,
    q: QuadratureOrder,
) -> f64 {
    integrate(part, region, times, q, &mut |at| (weight(&at.x, at.t) * field.value(at)).powi(2))
}

/// ∫₀ᵀ ‖∇e‖²_A over a set of cells.
pub fn energy_norm_sq(
    part: &Partition,
    field: &dyn ScalarField,
    spec: &ProblemSpec,
    region: Region,
    times: &TimeGrid,
    q: QuadratureOrder,
) -> f64 {
    let a = &spec.coefficients.diffusion;
    integrate(part, region, times, q, &mut |at| {
        let g = field.grad(at);
        (a(&at.x) * g).dot(&g)
    })
}

/// ∫₀ᵀ ‖y‖²_{A⁻¹} over a set of cells.
pub fn dual_norm_sq(
    part: &Partition,
    field: &dyn VectorField,
    spec: &ProblemSpec,
    region: Region,
    times: &TimeGrid,
    q: QuadratureOrder,
) -> f64 {
    let a = &spec.coefficients.diffusion;
    integrate(part, region, times, q, &mut |at| {
        let y = field.value(at);
        (inverse_block(&a(&at.x), part.dim) * y).dot(&y)
    })
}

/// Weights (ν, θ, ζ, χ) of the error measure, with
/// θ² = theta_offset + theta_reaction·ϱ² on each time slab.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureWeights {
    pub nu: f64,
    pub theta_offset: Vec<f64>,
    pub theta_reaction: Vec<f64>,
    pub zeta: f64,
    pub chi: f64,
}

impl MeasureWeights {
    /// θ = c_j ϱ with the same factor on every slab.
    pub fn uniform(nu: f64, theta_factor_sq: f64, zeta: f64, chi: f64, slabs: usize) -> Self {
        Self { nu, theta_offset: vec![0.0; slabs], theta_reaction: vec![theta_factor_sq; slabs], zeta, chi }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.nu, self.zeta, self.chi]
            .into_iter()
            .chain(self.theta_offset.iter().copied())
            .chain(self.theta_reaction.iter().copied());
        for w in all {
            if !(w >= 0.0) {
                return Err(Error::InvalidParameter(format!("error-measure weights must be non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Terms of the error measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureTerms {
    pub energy: f64,
    pub reaction: f64,
    pub terminal: f64,
    pub robin: f64,
    pub total: f64,
}

/// [e]² = ν∫‖∇e‖²_A + ∫‖θe‖² + ζ‖e(·,T)‖² + χ∫‖σe‖²_{Γ_R}.
pub fn error_measure(
    part: &Partition,
    e: &dyn ScalarField,
    weights: &MeasureWeights,
    spec: &ProblemSpec,
    times: &TimeGrid,
    q: QuadratureOrder,
) -> Result<MeasureTerms> {
    weights.validate()?;
    if weights.theta_offset.len() != times.n_slabs() || weights.theta_reaction.len() != times.n_slabs() {
        return Err(Error::Mismatch("θ weights must be given per time slab".into()));
    }
    let c = &spec.coefficients;
    let energy = weights.nu * energy_norm_sq(part, e, spec, Region::Domain, times, q);
    let reaction = integrate(part, Region::Domain, times, q, &mut |at| {
        let (j, _) = times.locate(at.t);
        let theta_sq = weights.theta_offset[j] + weights.theta_reaction[j] * (c.reaction)(&at.x).powi(2);
        theta_sq * e.value(at).powi(2)
    });
    let horizon = times.horizon();
    let terminal = weights.zeta
        * integrate_at(part, Region::Domain, horizon, q.space, &mut |at| e.value(at).powi(2));
    let robin = weights.chi
        * weighted_l2_norm_sq(part, e, &|x, _| (c.robin)(x), Region::Faces(&part.robin_faces), times, q);
    Ok(MeasureTerms { energy, reaction, terminal, robin, total: energy + reaction + terminal + robin })
}

/// Weights of the combined primal–dual norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombinedNormWeights {
    /// ∫‖∇(u−v)‖²_A
    pub nu: f64,
    /// ∫‖y−p‖²_{A⁻¹}
    pub theta: f64,
    /// ∫‖div(p−y) − (u−v)_t‖²
    pub zeta: f64,
    /// ∫‖ϱ(u−v)‖²
    pub kappa: f64,
    /// ‖(u−v)(·,T)‖²
    pub chi: f64,
    /// ∫‖σ(u−v)‖²_{Γ_R}
    pub vartheta: f64,
    /// ∫‖(p−y)·n‖²_{Γ_R}
    pub varpi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombinedNormTerms {
    pub primal_energy: f64,
    pub reaction: f64,
    pub terminal: f64,
    pub flux: f64,
    pub balance: f64,
    pub robin: f64,
    pub robin_flux: f64,
    pub total: f64,
}

/// The seven-term primal–dual deviation of (v, y) from (u, p).
pub fn combined_norm(
    part: &Partition,
    u_minus_v: &dyn ScalarField,
    p_minus_y: &dyn VectorField,
    w: &CombinedNormWeights,
    spec: &ProblemSpec,
    times: &TimeGrid,
    q: QuadratureOrder,
) -> CombinedNormTerms {
    let c = &spec.coefficients;
    let primal_energy = w.nu * energy_norm_sq(part, u_minus_v, spec, Region::Domain, times, q);
    let reaction =
        w.kappa * weighted_l2_norm_sq(part, u_minus_v, &|x, _| (c.reaction)(x), Region::Domain, times, q);
    let terminal =
        w.chi * integrate_at(part, Region::Domain, times.horizon(), q.space, &mut |at| u_minus_v.value(at).powi(2));
    let flux = w.theta * dual_norm_sq(part, p_minus_y, spec, Region::Domain, times, q);
    let balance = w.zeta
        * integrate(part, Region::Domain, times, q, &mut |at| (p_minus_y.div(at) - u_minus_v.dt(at)).powi(2));
    let robin = w.vartheta
        * weighted_l2_norm_sq(part, u_minus_v, &|x, _| (c.robin)(x), Region::Faces(&part.robin_faces), times, q);
    let robin_flux = w.varpi
        * integrate(part, Region::Faces(&part.robin_faces), times, q, &mut |at| {
            p_minus_y.value(at).dot(&outward_at(part, at)).powi(2)
        });
    CombinedNormTerms {
        primal_energy,
        reaction,
        terminal,
        flux,
        balance,
        robin,
        robin_flux,
        total: primal_energy + reaction + terminal + flux + balance + robin + robin_flux,
    }
}

/// Outward unit normal at a boundary point of `at.cell` (the face is
/// identified by proximity).
pub fn outward_at(part: &Partition, at: &At) -> Point {
    let cell = &part.subdomains[at.cell];
    let mut best = (f64::INFINITY, Point::zeros());
    for (i, &f) in cell.faces.iter().enumerate() {
        let face = &part.faces[f];
        if face.cells.len() != 1 {
            continue;
        }
        let n = face.normal * cell.face_signs[i];
        let d = (at.x - face.centroid).dot(&n).abs();
        if d < best.0 {
            best = (d, n);
        }
    }
    best.1
}

/// ∫∫ div y·e + ∫∫ y·∇e − ∫∫_{S_R} y·n e; zero for conforming y and e ∈ V₀.
pub fn divergence_identity_residual(
    part: &Partition,
    y: &dyn VectorField,
    e: &dyn ScalarField,
    times: &TimeGrid,
    q: QuadratureOrder,
) -> f64 {
    let volume = integrate(part, Region::Domain, times, q, &mut |at| y.div(at) * e.value(at) + y.value(at).dot(&e.grad(at)));
    let boundary = integrate(part, Region::Faces(&part.robin_faces), times, q, &mut |at| {
        y.value(at).dot(&outward_at(part, at)) * e.value(at)
    });
    volume - boundary
}
