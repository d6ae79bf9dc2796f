//! Majorants, the minorant, their parameters and the equivalence constants.

use std::collections::BTreeMap;

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::constants::ConstantSet;
use crate::error::{Error, Result};
use crate::fem::{self, scalar_basis};
use crate::fields::{integrate, integrate_at, At, FluxField, MeasureWeights, QuadratureOrder, Region, ScalarField, TimeGrid, VectorField};
use crate::linalg::{add_scaled, ksum, pcg, quad_form, restrict, spmv, KahanSum, SpdSolver, Triplets};
use crate::mesh::{FaceKind, Partition};
use crate::problems::ProblemSpec;
use crate::residuals::{complexes_from_local, compute_residuals, LocalResiduals, MuField, REACTION_FLOOR};

/// How the α-weights are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaChoice {
    /// Optimal triple on every time slab.
    PerSlab,
    /// One optimal triple for the whole interval.
    Constant,
    /// Given triple (must satisfy the constraint).
    Fixed([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MajorantParams {
    pub delta: f64,
    pub gamma: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub epsilon: f64,
    pub alphas: AlphaChoice,
    /// Relative tolerance of the mean-value checks.
    pub mean_tol: f64,
    /// Gauss points per axis for the spatial integrals.
    pub order: usize,
}

impl Default for MajorantParams {
    fn default() -> Self {
        Self {
            delta: 1.0,
            gamma: 1.0,
            rho1: 2.0,
            rho2: 2.0,
            epsilon: 2.0,
            alphas: AlphaChoice::PerSlab,
            mean_tol: 1e-9,
            order: fem::DEFAULT_ORDER,
        }
    }
}

fn range_error(name: &str, value: f64, range: &str) -> Error {
    Error::InvalidParameter(format!("{name} = {value} is outside the admissible range {range}"))
}

impl MajorantParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 2.0) {
            return Err(range_error("delta", self.delta, "(0, 2]"));
        }
        if !(self.gamma >= 0.5) || !self.gamma.is_finite() {
            return Err(range_error("gamma", self.gamma, "[1/2, ∞)"));
        }
        for (name, v) in [("rho1", self.rho1), ("rho2", self.rho2), ("epsilon", self.epsilon)] {
            if !(v >= 1.0) || !v.is_finite() {
                return Err(range_error(name, v, "[1, ∞)"));
            }
        }
        if !(self.mean_tol > 0.0) {
            return Err(range_error("mean_tol", self.mean_tol, "(0, ∞)"));
        }
        if self.order == 0 {
            return Err(range_error("order", 0.0, "[1, ∞)"));
        }
        if let AlphaChoice::Fixed(a) = &self.alphas {
            check_alpha_constraint(a, self.delta)?;
        }
        Ok(())
    }
}

/// Checks α_i > 0 and Σ 1/α_i = δ (relative 1e-12).
pub fn check_alpha_constraint(a: &[f64; 3], delta: f64) -> Result<()> {
    if a.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidParameter(format!("α must be positive, got {a:?}")));
    }
    let s: f64 = a.iter().map(|x| 1.0 / x).sum();
    if (s - delta).abs() > 1e-12 * delta {
        return Err(Error::InvalidParameter(format!("1/α₁ + 1/α₂ + 1/α₃ = {s} differs from δ = {delta}")));
    }
    Ok(())
}

/// Minimiser of α₁r₁² + α₂r₂² + α₃r₃² under Σ 1/α_i = δ:
/// α_i = (Σ r_j)/(δ r_i). Terms with r_i = 0 get α_i = ∞ (their product is
/// taken as zero); all-zero input gives the equal split 3/δ.
pub fn optimize_alphas(r: [f64; 3], delta: f64) -> [f64; 3] {
    let s: f64 = r.iter().sum();
    if !(s > 0.0) {
        return [3.0 / delta; 3];
    }
    r.map(|ri| if ri > 0.0 { s / (delta * ri) } else { f64::INFINITY })
}

/// α·a with the convention ∞·0 = 0.
fn weighted(alpha: f64, a: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        alpha * a
    }
}

/// Which of the hypotheses behind a bound were checked and held.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisChecks {
    pub parameters: bool,
    pub mean_values: bool,
    pub max_mean_violation: f64,
}

/// Time-integrated residual quantities per cell and per Robin face.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualBreakdown {
    pub flux_sq: Vec<f64>,
    pub source_mu_sq: Vec<f64>,
    pub source_rest_sq: Vec<f64>,
    pub boundary_sq: Vec<f64>,
}

/// One bound with its term breakdown and the error-measure weights it
/// controls.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundEntry {
    pub value: f64,
    pub breakdown: BTreeMap<String, f64>,
    pub weights: MeasureWeights,
    /// α-triple per time slab (empty for the minorant).
    pub alphas: Vec<[f64; 3]>,
    pub hypotheses: HypothesisChecks,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_breakdown: Option<ResidualBreakdown>,
}

fn entry(terms: &[(&str, f64)], weights: MeasureWeights, alphas: Vec<[f64; 3]>, hypotheses: HypothesisChecks) -> BoundEntry {
    BoundEntry {
        value: ksum(terms.iter().map(|t| t.1)),
        breakdown: terms.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        weights,
        alphas,
        hypotheses,
        residual_breakdown: None,
    }
}

/// Everything a majorant is evaluated from.
pub struct MajorantInput<'a> {
    pub part: &'a Partition,
    pub v: &'a dyn ScalarField,
    pub y: &'a dyn VectorField,
    pub w: Option<&'a dyn ScalarField>,
    pub spec: &'a ProblemSpec,
    pub constants: &'a ConstantSet,
    pub mu: &'a MuField,
    pub times: &'a TimeGrid,
}

impl MajorantInput<'_> {
    fn locals(&self, order: usize) -> Result<Vec<LocalResiduals>> {
        let res = compute_residuals(self.part, self.v, self.y, self.w, self.spec, self.mu)?;
        self.times.flux_points().iter().map(|tp| res.local(tp.t, order)).collect()
    }

    /// ‖u₀ − v(·,0)‖².
    fn initial_error(&self, order: usize) -> f64 {
        let u0 = &self.spec.data.initial;
        integrate_at(self.part, Region::Domain, 0.0, order, &mut |at| (u0(&at.x) - self.v.value(at)).powi(2))
    }

    fn breakdown(&self, locals: &[LocalResiduals]) -> ResidualBreakdown {
        let points = self.times.flux_points();
        let acc = |f: &dyn Fn(&LocalResiduals) -> &Vec<f64>, n: usize| {
            let mut out = vec![0.0; n];
            for (tp, l) in points.iter().zip(locals) {
                for (o, x) in out.iter_mut().zip(f(l)) {
                    *o += tp.weight * x;
                }
            }
            out
        };
        let (n, m) = (self.part.n_cells(), self.part.robin_faces.len());
        ResidualBreakdown {
            flux_sq: acc(&|l| &l.flux_sq, n),
            source_mu_sq: acc(&|l| &l.source_mu_sq, n),
            source_rest_sq: acc(&|l| &l.source_rest_sq, n),
            boundary_sq: acc(&|l| &l.boundary_sq, m),
        }
    }
}

/// Integrands of a majorant at one time point: the μ-part, the mean part and
/// the three α-weighted parts.
#[derive(Debug, Clone, Copy, Default)]
struct Densities {
    source_mu: f64,
    mean: f64,
    a: [f64; 3],
}

/// α-triples per slab and the weighted integral of the densities.
fn integrate_densities(
    times: &TimeGrid,
    dens: &[Densities],
    params: &MajorantParams,
    mu_weight: f64,
) -> Result<(Vec<[f64; 3]>, [f64; 5])> {
    let points = times.flux_points();
    let slabs = times.n_slabs();
    let mut per_slab = vec![[0.0f64; 3]; slabs];
    for (tp, d) in points.iter().zip(dens) {
        for i in 0..3 {
            per_slab[tp.slab][i] += tp.weight * d.a[i];
        }
    }
    let alphas: Vec<[f64; 3]> = match &params.alphas {
        AlphaChoice::PerSlab => per_slab.iter().map(|a| optimize_alphas(a.map(f64::sqrt), params.delta)).collect(),
        AlphaChoice::Constant => {
            let mut total = [0.0; 3];
            for a in &per_slab {
                for i in 0..3 {
                    total[i] += a[i];
                }
            }
            vec![optimize_alphas(total.map(f64::sqrt), params.delta); slabs]
        }
        AlphaChoice::Fixed(a) => vec![*a; slabs],
    };
    let mut sums = [KahanSum::new(), KahanSum::new(), KahanSum::new(), KahanSum::new(), KahanSum::new()];
    for (tp, d) in points.iter().zip(dens) {
        let al = alphas[tp.slab];
        sums[0].add(tp.weight * mu_weight * d.source_mu);
        sums[1].add(tp.weight * params.rho2 * d.mean);
        for i in 0..3 {
            sums[2 + i].add(tp.weight * weighted(al[i], d.a[i]));
        }
    }
    Ok((alphas, sums.map(|s| s.value())))
}

fn global_constants(c: &ConstantSet) -> Result<(f64, f64)> {
    match (c.friedrichs, c.robin_trace) {
        (Some(f), Some(g)) => Ok((f, g)),
        _ => Err(Error::Hypothesis("global Friedrichs and trace constants are unavailable (no Dirichlet part, or no closed form for this domain)".into())),
    }
}

/// Majorant with global Friedrichs and trace constants:
/// ‖e(0)‖² + ∫ α₁‖r_A‖²_{A⁻¹} + γ‖r_{f,μ}/ϱ‖² + α₂C_F²/λ‖r_{f,1−μ}‖²
/// + α₃C_Γ²/λ‖r_F‖²_{Γ_R} dt.
pub fn majorant_i(input: &MajorantInput, params: &MajorantParams) -> Result<BoundEntry> {
    params.validate()?;
    if input.w.is_some() {
        return Err(Error::InvalidParameter("this majorant takes no w".into()));
    }
    let (cf, cg) = global_constants(input.constants)?;
    let lambda = input.spec.coefficients.lambda_min;
    let locals = input.locals(params.order)?;
    let dens: Vec<Densities> = locals
        .iter()
        .map(|l| Densities {
            source_mu: ksum(l.source_mu_sq.iter().copied()),
            mean: 0.0,
            a: [
                ksum(l.flux_sq.iter().copied()),
                cf * cf / lambda * ksum(l.source_rest_sq.iter().copied()),
                cg * cg / lambda * ksum(l.boundary_sq.iter().copied()),
            ],
        })
        .collect();
    let (alphas, s) = integrate_densities(input.times, &dens, params, params.gamma)?;
    let init = input.initial_error(params.order);
    let slabs = input.times.n_slabs();
    let weights = MeasureWeights::uniform(2.0 - params.delta, 2.0 - 1.0 / params.gamma, 1.0, 2.0, slabs);
    let mut e = entry(
        &[
            ("initial_error", init),
            ("r_a", s[2]),
            ("r_f_mu", s[0]),
            ("r_f_rest", s[3]),
            ("r_boundary", s[4]),
        ],
        weights,
        alphas,
        HypothesisChecks { parameters: true, mean_values: true, max_mean_violation: 0.0 },
    );
    e.residual_breakdown = Some(input.breakdown(&locals));
    Ok(e)
}

/// Densities of the decomposed majorants, after checking the mean-value
/// conditions.
fn decomposed(input: &MajorantInput, params: &MajorantParams) -> Result<(Vec<Densities>, Vec<LocalResiduals>, f64)> {
    let lambda = input.spec.coefficients.lambda_min;
    let locals = input.locals(params.order)?;
    let mut worst: f64 = 0.0;
    let mut dens = Vec::with_capacity(locals.len());
    for l in &locals {
        let v = l.mean_violation(input.part, input.mu)?;
        worst = worst.max(v.cell).max(v.face);
        l.check_means(input.part, input.mu, params.mean_tol)?;
        let (op_mean, op_norm, o0, sr) = complexes_from_local(input.part, input.constants, lambda, l)?;
        dens.push(Densities {
            source_mu: ksum(l.source_mu_sq.iter().copied()),
            mean: op_mean,
            a: [ksum(l.flux_sq.iter().copied()), op_norm + o0, sr],
        });
    }
    Ok((dens, locals, worst))
}

/// Majorant with local constants on the partition:
/// ‖e(0)‖² + ∫ ρ₁‖r_{f,μ}/ϱ‖² + ρ₂R_OP,mean + α₁‖r_A‖²_{A⁻¹}
/// + α₂(R_OP,norm + R_O0) + α₃R_SR dt.
pub fn majorant_i_n(input: &MajorantInput, params: &MajorantParams) -> Result<BoundEntry> {
    params.validate()?;
    if input.w.is_some() {
        return Err(Error::InvalidParameter("this majorant takes no w".into()));
    }
    let (dens, locals, worst) = decomposed(input, params)?;
    let (alphas, s) = integrate_densities(input.times, &dens, params, params.rho1)?;
    let init = input.initial_error(params.order);
    let theta = 2.0 - 1.0 / params.rho1 - 1.0 / params.rho2;
    let weights = MeasureWeights::uniform(2.0 - params.delta, theta, 1.0, 2.0, input.times.n_slabs());
    let mut e = entry(
        &[
            ("initial_error", init),
            ("r_f_mu", s[0]),
            ("r_f_rest_mean", s[1]),
            ("r_a", s[2]),
            ("r_f_rest", s[3]),
            ("r_boundary", s[4]),
        ],
        weights,
        alphas,
        HypothesisChecks { parameters: true, mean_values: true, max_mean_violation: worst },
    );
    e.residual_breakdown = Some(input.breakdown(&locals));
    Ok(e)
}

/// Majorant with the extra free function w:
/// ε‖w(T)‖² + 2L(v,w) + l(v,w) + (decomposed integral with the w-residuals).
pub fn majorant_ii_n(input: &MajorantInput, params: &MajorantParams) -> Result<BoundEntry> {
    params.validate()?;
    let w = input.w.ok_or_else(|| Error::InvalidParameter("this majorant needs w".into()))?;
    let (dens, locals, worst) = decomposed(input, params)?;
    let (alphas, s) = integrate_densities(input.times, &dens, params, params.rho1)?;
    let (part, spec, v) = (input.part, input.spec, input.v);
    let c = &spec.coefficients;
    let q = QuadratureOrder { space: params.order, time: 3 };
    let terminal = params.epsilon
        * integrate_at(part, Region::Domain, input.times.horizon(), q.space, &mut |at| w.value(at).powi(2));
    let l_volume = integrate(part, Region::Domain, input.times, q, &mut |at| {
        let wv = w.value(at);
        v.dt(at) * wv + ((c.diffusion)(&at.x) * v.grad(at)).dot(&w.grad(at)) + (c.reaction)(&at.x).powi(2) * v.value(at) * wv
            - (spec.data.source)(&at.x, at.t) * wv
    });
    let l_robin = integrate(part, Region::Faces(&part.robin_faces), input.times, q, &mut |at| {
        ((spec.data.boundary)(&at.x, at.t) - (c.robin)(&at.x).powi(2) * v.value(at)) * w.value(at)
    });
    let u0 = &spec.data.initial;
    let l_small = integrate_at(part, Region::Domain, 0.0, q.space, &mut |at| {
        let d = v.value(at) - u0(&at.x);
        d * d + 2.0 * w.value(at) * d
    });
    let theta = 2.0 - 1.0 / params.rho1 - 1.0 / params.rho2;
    let weights = MeasureWeights::uniform(2.0 - params.delta, theta, 1.0 - 1.0 / params.epsilon, 2.0, input.times.n_slabs());
    let mut e = entry(
        &[
            ("terminal_w", terminal),
            ("two_l_functional", 2.0 * (l_volume - l_robin)),
            ("l_initial", l_small),
            ("r_f_mu", s[0]),
            ("r_f_rest_mean", s[1]),
            ("r_a", s[2]),
            ("r_f_rest", s[3]),
            ("r_boundary", s[4]),
        ],
        weights,
        alphas,
        HypothesisChecks { parameters: true, mean_values: true, max_mean_violation: worst },
    );
    e.residual_breakdown = Some(input.breakdown(&locals));
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinorantParams {
    pub kappa: [f64; 5],
    /// Gauss points per slab for the time integrals of the data.
    pub time_order: usize,
    pub order: usize,
}

impl Default for MinorantParams {
    fn default() -> Self {
        Self { kappa: [2.0, 1e-8, 2.0, 2.0, 4.0], time_order: 3, order: fem::DEFAULT_ORDER }
    }
}

impl MinorantParams {
    /// κ matched to majorant weights (ν, θ² = cϱ², ζ, χ), with a small κ₂.
    pub fn matching(weights: &MeasureWeights) -> Self {
        let c = weights.theta_reaction.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            kappa: [2.0 * weights.nu, 1e-8, 2.0 * c.max(1e-12), 2.0 * weights.zeta.max(1e-12), 2.0 * weights.chi],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.kappa.iter().find(|k| !(**k > 0.0) || !k.is_finite()) {
            return Err(range_error("kappa", *k, "(0, ∞)"));
        }
        if self.time_order == 0 || self.order == 0 {
            return Err(Error::InvalidParameter("quadrature orders must be positive".into()));
        }
        Ok(())
    }

    /// Weights (κ₁/2, (κ₂ + κ₃ϱ²)/2, κ₄/2, κ₅/2) of the measure it bounds.
    pub fn weights(&self, slabs: usize) -> MeasureWeights {
        let k = self.kappa;
        MeasureWeights {
            nu: k[0] / 2.0,
            theta_offset: vec![k[1] / 2.0; slabs],
            theta_reaction: vec![k[2] / 2.0; slabs],
            zeta: k[3] / 2.0,
            chi: k[4] / 2.0,
        }
    }
}

/// Assembles ∫ g(at, φ_i) over cells (and Robin faces for `boundary`) at a
/// fixed time into a nodal vector.
fn nodal_functional(
    part: &Partition,
    order: usize,
    t: f64,
    volume: &dyn Fn(&At) -> (f64, nalgebra::Vector3<f64>),
    boundary: Option<&dyn Fn(&At) -> f64>,
) -> DVector<f64> {
    let mut b = DVector::zeros(part.n_nodes());
    for cell in &part.subdomains {
        for (x, w) in cell.quadrature(order) {
            let at = At { cell: cell.id, x, t };
            let (s, g) = volume(&at);
            let basis = scalar_basis(cell, &x);
            for i in 0..basis.n {
                b[cell.nodes[i]] += w * (s * basis.values[i] + g.dot(&basis.grads[i]));
            }
        }
    }
    if let Some(bd) = boundary {
        for &f in &part.robin_faces {
            let face = &part.faces[f];
            let cell = &part.subdomains[face.cells[0]];
            for (x, w) in face.quadrature(&part.nodes, order) {
                let at = At { cell: cell.id, x, t };
                let s = bd(&at);
                let basis = scalar_basis(cell, &x);
                for i in 0..basis.n {
                    b[cell.nodes[i]] += w * s * basis.values[i];
                }
            }
        }
    }
    b
}

/// Lower bound: the maximum of the concave functional Σ G_i + G₀ over η in
/// the nodal space of the partition (zero on Γ_D), piecewise linear in time.
pub fn minorant(
    part: &Partition,
    v: &dyn ScalarField,
    spec: &ProblemSpec,
    times: &TimeGrid,
    params: &MinorantParams,
) -> Result<BoundEntry> {
    params.validate()?;
    let c = &spec.coefficients;
    let k = params.kappa;
    let order = params.order;
    let n = part.n_nodes();
    let levels = times.nodes().len();
    let mut index = vec![None; n];
    let mut nf = 0;
    for i in 0..n {
        if !part.dirichlet_nodes[i] {
            index[i] = Some(nf);
            nf += 1;
        }
    }
    let stiff = restrict(&fem::stiffness(part, &*c.diffusion, order), &index, nf);
    let mass = restrict(&fem::mass(part, &|_| 1.0, order), &index, nf);
    let react = restrict(&fem::mass(part, &|x| (c.reaction)(x).powi(2), order), &index, nf);
    let robin = restrict(&fem::boundary_mass(part, &part.robin_faces, &|x| (c.robin)(x).powi(2), order), &index, nf);
    let spatial = add_scaled(&add_scaled(&stiff, 1.0 / k[0], &react, 1.0 / k[2]), 1.0, &robin, 1.0 / k[4]);

    let size = levels * nf;
    let mut h = Triplets::new(size, size);
    let push_block = |h: &mut Triplets, a: &CsrMatrix<f64>, bi: usize, bj: usize, s: f64| {
        for (i, row) in a.row_iter().enumerate() {
            for (&j, &val) in row.col_indices().iter().zip(row.values()) {
                h.push(bi * nf + i, bj * nf + j, s * val);
            }
        }
    };
    for j in 0..times.n_slabs() {
        let dt = times.slab_length(j);
        for (a, b, tm, td) in [(j, j, 1.0 / 3.0, 1.0), (j, j + 1, 1.0 / 6.0, -1.0), (j + 1, j, 1.0 / 6.0, -1.0), (j + 1, j + 1, 1.0 / 3.0, 1.0)] {
            push_block(&mut h, &spatial, a, b, dt * tm);
            push_block(&mut h, &mass, a, b, td / (dt * k[1]));
        }
    }
    push_block(&mut h, &mass, levels - 1, levels - 1, 1.0 / k[3]);
    let h = h.to_csr();

    let gather = |full: &DVector<f64>| DVector::from_iterator(nf, (0..n).filter(|&i| index[i].is_some()).map(|i| full[i]));
    let mut rhs = DVector::zeros(size);
    let add = |rhs: &mut DVector<f64>, level: usize, vec: &DVector<f64>, s: f64| {
        let r = gather(vec);
        for i in 0..nf {
            rhs[level * nf + i] += s * r[i];
        }
    };
    let g = crate::quadrature::gauss_unit(params.time_order);
    for j in 0..times.n_slabs() {
        let dt = times.slab_length(j);
        let t0 = times.nodes()[j];
        for &(s, wq) in &g {
            let t = t0 + s * dt;
            let volume = |at: &At| {
                let vv = v.value(at);
                let src = (spec.data.source)(&at.x, at.t) - (c.reaction)(&at.x).powi(2) * vv;
                (src, -((c.diffusion)(&at.x) * v.grad(at)))
            };
            let boundary = |at: &At| (spec.data.boundary)(&at.x, at.t) - (c.robin)(&at.x).powi(2) * v.value(at);
            let r = nodal_functional(part, order, t, &volume, Some(&boundary));
            add(&mut rhs, j, &r, wq * dt * (1.0 - s));
            add(&mut rhs, j + 1, &r, wq * dt * s);
            let vm = nodal_functional(part, order, t, &|at| (v.value(at), nalgebra::Vector3::zeros()), None);
            add(&mut rhs, j + 1, &vm, wq);
            add(&mut rhs, j, &vm, -wq);
        }
    }
    let horizon = times.horizon();
    let vt = nodal_functional(part, order, horizon, &|at| (v.value(at), nalgebra::Vector3::zeros()), None);
    add(&mut rhs, levels - 1, &vt, -1.0);
    let u0 = &spec.data.initial;
    let init = nodal_functional(part, order, 0.0, &|at| (u0(&at.x), nalgebra::Vector3::zeros()), None);
    add(&mut rhs, 0, &init, 1.0);

    let eta = match SpdSolver::new(&h).and_then(|s| s.solve(&rhs)) {
        Ok(x) => x,
        Err(_) => {
            // Partial ascent still gives an admissible η, hence a valid bound.
            let cap = 20 * size + 100;
            match pcg(&h, &rhs, None, 1e-12, cap, None) {
                Ok(o) => o.x,
                Err(_) => DVector::zeros(size),
            }
        }
    };
    let linear = rhs.dot(&eta);
    let quadratic = 0.5 * quad_form(&h, &eta);
    let value = (linear - quadratic).max(0.0);
    let weights = params.weights(times.n_slabs());
    let mut e = entry(
        &[("linear", linear), ("quadratic", -quadratic)],
        weights,
        Vec::new(),
        HypothesisChecks { parameters: true, mean_values: true, max_mean_violation: 0.0 },
    );
    // η = 0 is admissible, so a negative round-off value is replaced by 0.
    e.value = value;
    e.breakdown.insert("eta_norm".into(), eta.norm());
    let _ = spmv;
    Ok(e)
}

/// The constants relating the decomposed majorants to the combined norm and
/// to the error measure (constant α, μ = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalenceConstants {
    pub c_max: f64,
    pub c_alpha3_gamma: f64,
    pub c_er: f64,
    pub c_maj: f64,
    pub k_ii: f64,
}

pub fn equivalence_constants(
    constants: &ConstantSet,
    alpha: [f64; 3],
    params: &MajorantParams,
    spec: &ProblemSpec,
) -> Result<EquivalenceConstants> {
    params.validate()?;
    if !(params.delta < 2.0) {
        return Err(range_error("delta", params.delta, "(0, 2) for the equivalence constants"));
    }
    if alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidParameter(format!("equivalence constants need finite positive α, got {alpha:?}")));
    }
    let c = &spec.coefficients;
    let lambda = c.lambda_min;
    let (g, d, eps) = (params.gamma, params.delta, params.epsilon);
    let [a1, a2, a3] = alpha;
    let cp_max = constants.poincare_max;
    let c_max = g.max(a2) / lambda * (cp_max * cp_max).max(constants.strong_cell_ratio);
    let c_a3g = a3 * constants.trace_max.powi(2) / lambda;
    let reaction_term = if g > 0.5 { g * c.reaction_bound.powi(2) * c_max / (2.0 * g - 1.0) } else { f64::INFINITY };
    let c_er = (a1 / (2.0 - d)).max(reaction_term).max(1.0).max(0.5 * c.robin_bound.powi(2) * c_a3g);
    let gamma_ratio = (constants.trace_max / constants.trace_min).powi(2);
    let c_maj = (2.0 * c_er + 1.0)
        .max(2.0 * c_er)
        .max(2.0 * c_er + c_max / (a2 * constants.poincare_min.powi(2)))
        .max(2.0 * c_er + gamma_ratio);
    let theta_den = 2.0 - 1.0 / g;
    let second = if theta_den > 0.0 {
        2.0 * ((2.0 * a1 * cp_max * cp_max / lambda - 1.0).max(0.0) / theta_den).sqrt()
    } else {
        f64::INFINITY
    };
    let k_ii = (2.0 * (2.0 * a2 - 1.0) / (2.0 - d))
        .max(second)
        .max(eps)
        .max(2.0 * a3 * constants.trace_max.powi(2) / lambda - 1.0);
    Ok(EquivalenceConstants { c_max, c_alpha3_gamma: c_a3g, c_er, c_maj, k_ii })
}

/// Weights of the combined norm in the first double inequality.
pub fn combined_weights(eq: &EquivalenceConstants, alpha: [f64; 3], spec: &ProblemSpec) -> crate::fields::CombinedNormWeights {
    let c = &spec.coefficients;
    crate::fields::CombinedNormWeights {
        nu: alpha[0],
        theta: alpha[0],
        zeta: eq.c_max,
        kappa: c.reaction_bound.powi(2) * eq.c_max,
        chi: 1.0,
        vartheta: c.robin_bound.powi(2) * eq.c_alpha3_gamma,
        varpi: eq.c_alpha3_gamma,
    }
}

/// Result of the flux optimisation.
#[derive(Debug, Clone)]
pub struct OptimizedFlux {
    pub y: FluxField,
    pub entry: BoundEntry,
    /// Majorant after each outer iteration, starting with the initial flux.
    pub history: Vec<f64>,
}

/// Quadratic model of the decomposed-majorant integrand at one time point as
/// a function of the free face values, with α fixed.
struct TimeQuadratic {
    h: CsrMatrix<f64>,
    b: DVector<f64>,
}

/// Lowers the decomposed majorant over the flux: alternates the α-update and
/// a projected conjugate-gradient pass on each time point, keeping the
/// mean-value conditions (Robin values fixed, weak-cell means preserved).
/// Iterates that would not lower the majorant are rejected.
#[allow(clippy::too_many_arguments)]
pub fn minimize_majorant_over_y(
    y0: &FluxField,
    v: &dyn ScalarField,
    w: Option<&dyn ScalarField>,
    spec: &ProblemSpec,
    constants: &ConstantSet,
    mu: &MuField,
    params: &MajorantParams,
    iterations: usize,
    cg_steps: usize,
) -> Result<OptimizedFlux> {
    let part = y0.partition().clone();
    let times = y0.times().clone();
    let eval = |y: &FluxField| {
        let input = MajorantInput { part: &part, v, y, w, spec, constants, mu, times: &times };
        if w.is_some() {
            majorant_ii_n(&input, params)
        } else {
            majorant_i_n(&input, params)
        }
    };
    let mut y = y0.clone();
    let mut best = eval(&y)?;
    let mut history = vec![best.value];
    let cl = part.classification()?;
    let lambda = spec.coefficients.lambda_min;
    let order = params.order;

    // Free face values and the constraint rows (weak cells with μ < 1).
    let free: Vec<usize> = (0..part.n_faces()).filter(|&f| part.faces[f].kind != FaceKind::Robin).collect();
    let mut col = vec![None; part.n_faces()];
    for (k, &f) in free.iter().enumerate() {
        col[f] = Some(k);
    }
    let constrained: Vec<usize> = cl.weak.iter().copied().filter(|&c| mu.at(c) < 1.0).collect();
    let mut ct = Triplets::new(constrained.len(), free.len());
    for (r, &c) in constrained.iter().enumerate() {
        let cell = &part.subdomains[c];
        for (i, &f) in cell.faces.iter().enumerate() {
            if let Some(k) = col[f] {
                ct.push(r, k, cell.face_signs[i] * part.faces[f].measure);
            }
        }
    }
    let cmat = ct.to_csr();
    let cct = {
        let ctr = cmat.transpose();
        &cmat * &ctr
    };
    let projector = if constrained.is_empty() { None } else { Some(SpdSolver::new(&cct)?) };
    let project = |g: &mut DVector<f64>| -> Result<()> {
        if let Some(s) = &projector {
            let lam = s.solve(&spmv(&cmat, g))?;
            let ctr = cmat.transpose();
            *g -= spmv(&ctr, &lam);
        }
        Ok(())
    };
    let flux_mass = fem::flux_mass(&part, &*spec.coefficients.diffusion, order);
    let strong: Vec<bool> = {
        let mut s = vec![false; part.n_cells()];
        cl.strong.iter().for_each(|&c| s[c] = true);
        s
    };
    let res_zero_flux = FluxField::zeros(part.clone(), times.clone());

    for _ in 0..iterations {
        let alphas = best.alphas.clone();
        let mut trial = y.clone();
        for (k, tp) in times.flux_points().iter().enumerate() {
            let al = alphas[tp.slab];
            let quad = time_quadratic(
                &part, &flux_mass, &res_zero_flux, v, w, spec, constants, mu, params, al, tp.t, lambda, &strong, &free,
                &trial.dofs()[k],
            )?;
            let mut x = DVector::from_iterator(free.len(), free.iter().map(|&f| trial.dofs()[k][f]));
            let mut r = &quad.b - spmv(&quad.h, &x);
            project(&mut r)?;
            let mut d = r.clone();
            let mut rr = r.dot(&r);
            let r0 = rr.sqrt();
            for _ in 0..cg_steps {
                if rr.sqrt() <= 1e-13 * (1.0 + r0) {
                    break;
                }
                let hd = spmv(&quad.h, &d);
                let dhd = d.dot(&hd);
                if !(dhd > 0.0) {
                    break;
                }
                let step = rr / dhd;
                x.axpy(step, &d, 1.0);
                r.axpy(-step, &hd, 1.0);
                project(&mut r)?;
                let rr_new = r.dot(&r);
                d = &r + (rr_new / rr) * &d;
                rr = rr_new;
            }
            for (i, &f) in free.iter().enumerate() {
                trial.dofs_mut()[k][f] = x[i];
            }
        }
        let candidate = eval(&trial)?;
        if candidate.value <= best.value {
            history.push(candidate.value);
            let gain = best.value - candidate.value;
            y = trial;
            best = candidate;
            if gain <= 1e-14 * best.value.max(1e-300) {
                break;
            }
        } else {
            break;
        }
    }
    Ok(OptimizedFlux { y, entry: best, history })
}

/// J(q) = qᵀHq − 2bᵀq + const for the integrand at time t; the minimiser
/// solves Hq = b.
#[allow(clippy::too_many_arguments)]
fn time_quadratic(
    part: &Partition,
    flux_mass: &CsrMatrix<f64>,
    zero: &FluxField,
    v: &dyn ScalarField,
    w: Option<&dyn ScalarField>,
    spec: &ProblemSpec,
    constants: &ConstantSet,
    mu: &MuField,
    params: &MajorantParams,
    alpha: [f64; 3],
    t: f64,
    lambda: f64,
    strong: &[bool],
    free: &[usize],
    current: &DVector<f64>,
) -> Result<TimeQuadratic> {
    let nfaces = part.n_faces();
    let res = compute_residuals(part, v, zero, w, spec, mu)?;
    let p2 = part.classification()?.threshold.powi(2);
    let a1 = if alpha[0].is_finite() { alpha[0] } else { 0.0 };
    let a2 = if alpha[1].is_finite() { alpha[1] } else { 0.0 };
    let mut h = Triplets::new(nfaces, nfaces);
    for (i, row) in flux_mass.row_iter().enumerate() {
        for (&j, &val) in row.col_indices().iter().zip(row.values()) {
            h.push(i, j, a1 * val);
        }
    }
    let mut b = DVector::zeros(nfaces);
    for cell in &part.subdomains {
        let c = cell.id;
        let m = mu.at(c);
        let area = cell.measure;
        // ∫ψ_i·∇(v − w) for the flux term, with r_A = y − A∇(v − w).
        let mut g_int = KahanSum::new();
        let mut g_rho = KahanSum::new();
        let mut inv_rho = KahanSum::new();
        for (x, wq) in cell.quadrature(params.order) {
            let at = At { cell: c, x, t };
            let grad = match w {
                Some(w) => v.grad(&at) - w.grad(&at),
                None => v.grad(&at),
            };
            let basis = fem::flux_basis(cell, &x);
            for i in 0..basis.n {
                b[cell.faces[i]] += a1 * wq * basis.values[i].dot(&grad);
            }
            let g = res.source_part(&at);
            g_int.add(wq * g);
            if m > 0.0 {
                let rho = (spec.coefficients.reaction)(&x);
                if rho < REACTION_FLOOR {
                    return Err(Error::Hypothesis(format!("μ > 0 where the reaction vanishes (cell {c})")));
                }
                g_rho.add(wq * g / (rho * rho));
                inv_rho.add(wq / (rho * rho));
            }
        }
        // div y = d on the cell, d = Σ s_i|F_i|q_i/|Ω|.
        let dcoef: Vec<(usize, f64)> = cell
            .faces
            .iter()
            .enumerate()
            .map(|(i, &f)| (f, cell.face_signs[i] * part.faces[f].measure / area))
            .collect();
        let cp2 = constants.poincare[c].powi(2) / lambda;
        let rest = (1.0 - m).powi(2);
        // coefficient of d² and of 2d
        let mut quad = params.rho1 * m * m * inv_rho.value() + a2 * cp2 * rest * area;
        let mut lin = params.rho1 * m * m * g_rho.value() + a2 * cp2 * rest * g_int.value();
        if strong[c] {
            quad += params.rho2 * rest * area / p2;
            lin += params.rho2 * rest * g_int.value() / p2;
        }
        for &(fi, ci) in &dcoef {
            for &(fj, cj) in &dcoef {
                h.push(fi, fj, quad * ci * cj);
            }
            b[fi] -= lin * ci;
        }
    }
    let h = h.to_csr();
    let mut index = vec![None; nfaces];
    for (k, &f) in free.iter().enumerate() {
        index[f] = Some(k);
    }
    // Fixed Robin values move to the right-hand side.
    let mut fixed = current.clone();
    for &f in free {
        fixed[f] = 0.0;
    }
    let b = b - spmv(&h, &fixed);
    let hf = restrict(&h, &index, free.len());
    let bf = DVector::from_iterator(free.len(), free.iter().map(|&f| b[f]));
    Ok(TimeQuadratic { h: hf, b: bf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::ConstantStrategy;
    use crate::fields::{error_measure, Difference, Zero};
    use crate::pipeline::{prepare, Settings};
    use crate::problems::{manufactured_problem, ManufacturedId};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn alpha_examples() {
        assert_eq!(optimize_alphas([1.0, 1.0, 1.0], 1.0), [3.0, 3.0, 3.0]);
        let a = optimize_alphas([1.0, 2.0, 3.0], 2.0);
        assert_relative_eq!(a[0], 3.0, max_relative = 1e-15);
        assert_relative_eq!(a[1], 1.5, max_relative = 1e-15);
        assert_relative_eq!(a[2], 1.0, max_relative = 1e-15);
        // the dropped term leaves 1/α₂ + 1/α₃ = δ
        let a = optimize_alphas([0.0, 1.0, 1.0], 2.0);
        assert_eq!(a[0], f64::INFINITY);
        assert_eq!([a[1], a[2]], [1.0, 1.0]);
        assert_eq!(optimize_alphas([0.0; 3], 0.5), [6.0; 3]);
        assert!(check_alpha_constraint(&[3.0, 3.0, 3.0], 1.0).is_ok());
        assert!(check_alpha_constraint(&[3.0, 3.0, 2.0], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn optimal_alphas_meet_the_constraint(r in prop::array::uniform3(0.0f64..10.0), delta in 0.01f64..2.0) {
            let a = optimize_alphas(r, delta);
            let s: f64 = a.iter().map(|x| 1.0 / x).sum();
            prop_assert!((s - delta).abs() <= 1e-12 * delta);
            // no feasible triple does better
            let best: f64 = r.iter().zip(&a).map(|(ri, ai)| weighted(*ai, ri * ri)).sum();
            let equal: f64 = r.iter().map(|ri| 3.0 / delta * ri * ri).sum();
            prop_assert!(best <= equal * (1.0 + 1e-12));
            prop_assert!((best - r.iter().sum::<f64>().powi(2) / delta).abs() <= 1e-10 * (1.0 + best));
        }
    }

    #[test]
    fn parameter_ranges() {
        let p = MajorantParams { delta: 3.0, ..Default::default() };
        let msg = p.validate().unwrap_err().to_string();
        assert!(msg.contains("(0, 2]"), "{msg}");
        assert!(MajorantParams { gamma: 0.4, ..Default::default() }.validate().is_err());
        assert!(MajorantParams { rho1: 0.9, ..Default::default() }.validate().is_err());
        assert!(MajorantParams { epsilon: 0.5, ..Default::default() }.validate().is_err());
        assert!(MajorantParams { alphas: AlphaChoice::Fixed([3.0, 3.0, 3.0]), ..Default::default() }.validate().is_ok());
        assert!(MinorantParams { kappa: [1.0, 0.0, 1.0, 1.0, 1.0], ..Default::default() }.validate().is_err());
    }

    #[test]
    fn equivalence_constants_by_hand() {
        let mp = manufactured_problem(ManufacturedId::Mp1);
        let c = ConstantSet {
            strategy: ConstantStrategy::ClosedForm,
            friedrichs: Some(1.0),
            robin_trace: Some(1.0),
            poincare: vec![1.0],
            face_trace: vec![1.0],
            poincare_max: 1.0,
            poincare_min: 1.0,
            trace_max: 1.0,
            trace_min: 1.0,
            strong_cell_ratio: 1.0,
        };
        let e = equivalence_constants(&c, [3.0; 3], &MajorantParams::default(), &mp.spec).unwrap();
        assert_relative_eq!(e.c_max, 3.0);
        assert_relative_eq!(e.c_alpha3_gamma, 3.0);
        assert_relative_eq!(e.c_er, 3.0);
        assert_relative_eq!(e.c_maj, 7.0);
        assert!(e.c_maj >= 2.0 * e.c_er + 1.0);
        assert!(equivalence_constants(&c, [2.0; 3], &MajorantParams { delta: 2.0, ..Default::default() }, &mp.spec).is_err());
    }

    fn exact_inputs(id: ManufacturedId) -> (crate::problems::ManufacturedProblem, crate::pipeline::Setup) {
        let mp = manufactured_problem(id);
        let s = Settings { resolution: 4, time_steps: 4, ..Settings::default() };
        let setup = prepare(&mp.spec, &s, None, None).unwrap();
        (mp, setup)
    }

    #[test]
    fn exact_pair_gives_zero() {
        for id in [ManufacturedId::Mp1, ManufacturedId::Mp2, ManufacturedId::Mp3] {
            let (mp, setup) = exact_inputs(id);
            let input = MajorantInput {
                part: &setup.part,
                v: &mp.exact,
                y: &mp.flux,
                w: None,
                spec: &mp.spec,
                constants: &setup.constants,
                mu: &setup.mu,
                times: &setup.times,
            };
            let p = MajorantParams::default();
            if setup.constants.friedrichs.is_some() {
                assert!(majorant_i(&input, &p).unwrap().value <= 1e-20, "{id}");
            }
            assert!(majorant_i_n(&input, &p).unwrap().value <= 1e-20, "{id}");
            let ii = majorant_ii_n(&MajorantInput { w: Some(&Zero), ..input }, &p).unwrap();
            assert!(ii.value.abs() <= 1e-12, "{id}: {}", ii.value);
            let low = minorant(&setup.part, &mp.exact, &mp.spec, &setup.times, &MinorantParams::default()).unwrap();
            assert!(low.value <= 1e-10, "{id}: {}", low.value);
        }
    }

    #[test]
    fn bounds_enclose_the_error_and_breakdowns_add_up() {
        let (mp, setup) = exact_inputs(ManufacturedId::Mp1);
        let input = MajorantInput {
            part: &setup.part,
            v: &setup.v,
            y: &setup.y,
            w: None,
            spec: &mp.spec,
            constants: &setup.constants,
            mu: &setup.mu,
            times: &setup.times,
        };
        let p = MajorantParams::default();
        let e = Difference(&mp.exact, &setup.v);
        let q = QuadratureOrder { space: 4, time: 3 };
        let i_n = majorant_i_n(&input, &p).unwrap();
        for m in [majorant_i(&input, &p).unwrap(), i_n.clone(), majorant_ii_n(&MajorantInput { w: Some(&Zero), ..input }, &p).unwrap()] {
            let measure = error_measure(&setup.part, &e, &m.weights, &mp.spec, &setup.times, q).unwrap().total;
            assert!(measure <= m.value, "{measure} > {}", m.value);
            let sum: f64 = m.breakdown.values().sum();
            assert!((sum - m.value).abs() <= 1e-12 * m.value);
        }
        let kappa = MinorantParams::matching(&i_n.weights);
        let low = minorant(&setup.part, &setup.v, &mp.spec, &setup.times, &kappa).unwrap();
        let measure = error_measure(&setup.part, &e, &low.weights, &mp.spec, &setup.times, q).unwrap().total;
        assert!(low.value >= 0.0 && low.value <= measure + 1e-8);
        // a larger time-derivative weight gives a sharper lower bound
        let loose = MinorantParams { kappa: [2.0, 1.0, 2.0, 2.0, 4.0], ..Default::default() };
        let low2 = minorant(&setup.part, &setup.v, &mp.spec, &setup.times, &loose).unwrap();
        let measure2 = error_measure(&setup.part, &e, &low2.weights, &mp.spec, &setup.times, q).unwrap().total;
        assert!(low2.value <= measure2 + 1e-8 && low2.value > low.value);
    }

    #[test]
    fn second_majorant_with_zero_w_matches_first() {
        let (mp, setup) = exact_inputs(ManufacturedId::Mp2);
        let input = MajorantInput {
            part: &setup.part,
            v: &setup.v,
            y: &setup.y,
            w: None,
            spec: &mp.spec,
            constants: &setup.constants,
            mu: &setup.mu,
            times: &setup.times,
        };
        let p = MajorantParams::default();
        let a = majorant_i_n(&input, &p).unwrap();
        let b = majorant_ii_n(&MajorantInput { w: Some(&Zero), ..input }, &p).unwrap();
        assert_relative_eq!(a.value, b.value, max_relative = 1e-13);
        assert_eq!(b.weights.zeta, 0.5);
    }

    #[test]
    fn refined_quadrature_agrees() {
        let (mp, setup) = exact_inputs(ManufacturedId::Mp1);
        let mu = MuField::constant(setup.part.n_cells(), 0.0);
        let input = MajorantInput {
            part: &setup.part,
            v: &setup.v,
            y: &setup.y,
            w: None,
            spec: &mp.spec,
            constants: &setup.constants,
            mu: &mu,
            times: &setup.times,
        };
        let p = MajorantParams { alphas: AlphaChoice::Fixed([3.0; 3]), ..Default::default() };
        let coarse = majorant_i(&input, &p).unwrap().value;
        let fine = majorant_i(&input, &MajorantParams { order: 8, ..p }).unwrap().value;
        assert_relative_eq!(coarse, fine, max_relative = 5e-3);
    }

    #[test]
    fn optimizer_is_monotone_and_helps() {
        let (mp, setup) = exact_inputs(ManufacturedId::Mp3);
        let p = MajorantParams::default();
        let o = minimize_majorant_over_y(&setup.y, &setup.v, None, &mp.spec, &setup.constants, &setup.mu, &p, 10, 50)
            .unwrap();
        for w in o.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(o.entry.value < 0.5 * o.history[0]);
        assert_eq!(o.entry.value, *o.history.last().unwrap());
    }
}
