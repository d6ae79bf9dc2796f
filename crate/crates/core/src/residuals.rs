//! Residuals of an approximation (v, y[, w]), the μ-split of the source
//! residual, the mean-value correction of fluxes and the localized residual
//! complexes.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constants::ConstantSet;
use crate::error::{Error, Result};
use crate::fem::inverse_block;
use crate::fields::{same_mesh, At, FluxField, ScalarField, VectorField};
use crate::linalg::{KahanSum, SpdSolver, Triplets};
use crate::mesh::{FaceKind, Partition, Point};
use crate::problems::ProblemSpec;

/// Reaction values below this count as zero.
pub const REACTION_FLOOR: f64 = 1e-12;

/// μ, constant on each subdomain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuField {
    pub per_cell: Vec<f64>,
}

impl MuField {
    pub fn constant(cells: usize, value: f64) -> Self {
        Self { per_cell: vec![value; cells] }
    }

    pub fn at(&self, cell: usize) -> f64 {
        self.per_cell[cell]
    }

    pub fn validate(&self, part: &Partition) -> Result<()> {
        if self.per_cell.len() != part.n_cells() {
            return Err(Error::Mismatch(format!("μ has {} values for {} cells", self.per_cell.len(), part.n_cells())));
        }
        if let Some(&m) = self.per_cell.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::InvalidParameter(format!("μ must lie in [0, 1], got {m}")));
        }
        if let Some(cl) = &part.classification {
            if let Some(c) = (0..part.n_cells()).find(|&c| self.per_cell[c] > 0.0 && cl.reaction_min[c] < REACTION_FLOOR) {
                return Err(Error::InvalidParameter(format!("μ > 0 on cell {c} where the reaction coefficient vanishes")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuStrategy {
    Zero,
    #[serde(rename = "indicator_OP", alias = "indicator_op")]
    IndicatorOp,
    Scan,
}

/// Values tried per group by the scan strategy.
pub const MU_SCAN_VALUES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Chooses μ. `scan` needs `score`, the majorant as a function of μ, and
/// searches constants per group (strong cells, weak cells with positive
/// reaction); cells without reaction keep μ = 0.
pub fn select_mu(
    part: &Partition,
    strategy: MuStrategy,
    score: Option<&mut dyn FnMut(&MuField) -> Result<f64>>,
) -> Result<MuField> {
    let cl = part.classification()?;
    let n = part.n_cells();
    match strategy {
        MuStrategy::Zero => Ok(MuField::constant(n, 0.0)),
        MuStrategy::IndicatorOp => {
            let mut mu = MuField::constant(n, 0.0);
            for &c in &cl.strong {
                if cl.reaction_min[c] >= REACTION_FLOOR {
                    mu.per_cell[c] = 1.0;
                }
            }
            Ok(mu)
        }
        MuStrategy::Scan => {
            let score = score.ok_or_else(|| Error::InvalidParameter("μ scan needs a majorant to minimise".into()))?;
            let strong: Vec<usize> = cl.strong.iter().copied().filter(|&c| cl.reaction_min[c] >= REACTION_FLOOR).collect();
            let weak: Vec<usize> = cl.weak.iter().copied().filter(|&c| cl.reaction_min[c] >= REACTION_FLOOR).collect();
            let strong_values: &[f64] = if strong.is_empty() { &[0.0] } else { &MU_SCAN_VALUES };
            let weak_values: &[f64] = if weak.is_empty() { &[0.0] } else { &MU_SCAN_VALUES };
            let mut best: Option<(f64, MuField)> = None;
            for &a in strong_values {
                for &b in weak_values {
                    let mut mu = MuField::constant(n, 0.0);
                    strong.iter().for_each(|&c| mu.per_cell[c] = a);
                    weak.iter().for_each(|&c| mu.per_cell[c] = b);
                    let value = match score(&mu) {
                        Ok(v) => v,
                        // a choice whose mean-value correction is infeasible is skipped
                        Err(Error::InfeasibleCorrection { .. }) => continue,
                        Err(e) => return Err(e),
                    };
                    if best.as_ref().is_none_or(|(b, _)| value < *b) {
                        best = Some((value, mu));
                    }
                }
            }
            best.map(|(_, mu)| mu)
                .ok_or_else(|| Error::InfeasibleCorrection { cells: cl.weak.clone(), faces: Vec::new() })
        }
    }
}

/// The residuals of (v, y) or, with w, of (v, y, w):
/// r_f = f − (v+w)_t − ϱ²(v−w) + div y, r_A = y − A∇(v−w),
/// r_F = F − σ²(v−w) − y·n.
pub struct ResidualSet<'a> {
    pub part: &'a Partition,
    pub v: &'a dyn ScalarField,
    pub y: &'a dyn VectorField,
    pub w: Option<&'a dyn ScalarField>,
    pub spec: &'a ProblemSpec,
    pub mu: &'a MuField,
}

pub fn compute_residuals<'a>(
    part: &'a Partition,
    v: &'a dyn ScalarField,
    y: &'a dyn VectorField,
    w: Option<&'a dyn ScalarField>,
    spec: &'a ProblemSpec,
    mu: &'a MuField,
) -> Result<ResidualSet<'a>> {
    let meshes = [v.mesh(), y.mesh(), w.and_then(|w| w.mesh())];
    for m in meshes.into_iter().flatten() {
        if !same_mesh(part, m) {
            return Err(Error::Mismatch("v, y and w must live on the same partition".into()));
        }
    }
    mu.validate(part)?;
    Ok(ResidualSet { part, v, y, w, spec, mu })
}

impl ResidualSet<'_> {
    pub fn with_w(&self) -> bool {
        self.w.is_some()
    }

    /// (v − w, (v + w)_t, ∇(v − w)).
    fn primal(&self, at: &At) -> (f64, f64, Point) {
        match self.w {
            None => (self.v.value(at), self.v.dt(at), self.v.grad(at)),
            Some(w) => (self.v.value(at) - w.value(at), self.v.dt(at) + w.dt(at), self.v.grad(at) - w.grad(at)),
        }
    }

    /// f − (v+w)_t − ϱ²(v−w), the part of r_f without div y.
    pub fn source_part(&self, at: &At) -> f64 {
        let (value, rate, _) = self.primal(at);
        (self.spec.data.source)(&at.x, at.t) - rate - (self.spec.coefficients.reaction)(&at.x).powi(2) * value
    }

    pub fn r_f(&self, at: &At) -> f64 {
        self.source_part(at) + self.y.div(at)
    }

    pub fn r_f_mu(&self, at: &At) -> f64 {
        self.mu.at(at.cell) * self.r_f(at)
    }

    pub fn r_f_1mu(&self, at: &At) -> f64 {
        (1.0 - self.mu.at(at.cell)) * self.r_f(at)
    }

    pub fn r_a(&self, at: &At) -> Point {
        let (_, _, g) = self.primal(at);
        self.y.value(at) - (self.spec.coefficients.diffusion)(&at.x) * g
    }

    /// F − σ²(v−w), the part of r_F without the normal flux.
    pub fn boundary_part(&self, at: &At) -> f64 {
        let (value, _, _) = self.primal(at);
        (self.spec.data.boundary)(&at.x, at.t) - (self.spec.coefficients.robin)(&at.x).powi(2) * value
    }

    pub fn r_boundary(&self, at: &At, outward: &Point) -> f64 {
        self.boundary_part(at) - self.y.value(at).dot(outward)
    }

    /// Cell and Robin-face integrals of the residuals at time `t`.
    pub fn local(&self, t: f64, order: usize) -> Result<LocalResiduals> {
        let part = self.part;
        let n = part.n_cells();
        let mut out = LocalResiduals {
            t,
            flux_sq: vec![0.0; n],
            source_mu_sq: vec![0.0; n],
            source_rest_sq: vec![0.0; n],
            source_rest_integral: vec![0.0; n],
            source_rest_scale: vec![0.0; n],
            boundary_sq: vec![0.0; part.robin_faces.len()],
            boundary_integral: vec![0.0; part.robin_faces.len()],
            boundary_scale: vec![0.0; part.robin_faces.len()],
        };
        let dim = part.dim;
        for cell in &part.subdomains {
            let c = cell.id;
            let mu = self.mu.at(c);
            let mut sums = [KahanSum::new(), KahanSum::new(), KahanSum::new(), KahanSum::new(), KahanSum::new()];
            for (x, w) in cell.quadrature(order) {
                let at = At { cell: c, x, t };
                let g = self.source_part(&at);
                let d = self.y.div(&at);
                let rf = g + d;
                let ra = self.r_a(&at);
                let ainv = inverse_block(&(self.spec.coefficients.diffusion)(&x), dim);
                sums[0].add(w * (ainv * ra).dot(&ra));
                if mu > 0.0 {
                    let rho = (self.spec.coefficients.reaction)(&x);
                    if rho < REACTION_FLOOR {
                        return Err(Error::Hypothesis(format!(
                            "μ > 0 at a point of cell {c} where the reaction coefficient vanishes"
                        )));
                    }
                    sums[1].add(w * (mu * rf / rho).powi(2));
                }
                let rest = (1.0 - mu) * rf;
                sums[2].add(w * rest * rest);
                sums[3].add(w * rest);
                sums[4].add(w * (1.0 - mu) * (g.abs() + d.abs()));
            }
            out.flux_sq[c] = sums[0].value();
            out.source_mu_sq[c] = sums[1].value();
            out.source_rest_sq[c] = sums[2].value();
            out.source_rest_integral[c] = sums[3].value();
            out.source_rest_scale[c] = sums[4].value();
        }
        for (j, &f) in part.robin_faces.iter().enumerate() {
            let face = &part.faces[f];
            let n = part.outward_normal(f);
            let mut sums = [KahanSum::new(), KahanSum::new(), KahanSum::new()];
            for (x, w) in face.quadrature(&part.nodes, order) {
                let at = At { cell: face.cells[0], x, t };
                let b = self.boundary_part(&at);
                let yn = self.y.value(&at).dot(&n);
                let r = b - yn;
                sums[0].add(w * r * r);
                sums[1].add(w * r);
                sums[2].add(w * (b.abs() + yn.abs()));
            }
            out.boundary_sq[j] = sums[0].value();
            out.boundary_integral[j] = sums[1].value();
            out.boundary_scale[j] = sums[2].value();
        }
        Ok(out)
    }
}

/// Per-cell and per-Robin-face residual integrals at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalResiduals {
    pub t: f64,
    /// ‖r_A‖²_{A⁻¹} per cell.
    pub flux_sq: Vec<f64>,
    /// ‖r_{f,μ}/ϱ‖² per cell.
    pub source_mu_sq: Vec<f64>,
    /// ‖r_{f,1−μ}‖² per cell.
    pub source_rest_sq: Vec<f64>,
    /// ∫ r_{f,1−μ} per cell.
    pub source_rest_integral: Vec<f64>,
    /// ∫ (1−μ)(|f − …| + |div y|), the size the mean is compared with.
    pub source_rest_scale: Vec<f64>,
    /// ‖r_F‖² per Robin face.
    pub boundary_sq: Vec<f64>,
    /// ∫ r_F per Robin face.
    pub boundary_integral: Vec<f64>,
    pub boundary_scale: Vec<f64>,
}

/// Largest mean-value violations at one time: (cell, relative), (face, relative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanViolation {
    pub cell: f64,
    pub face: f64,
}

impl LocalResiduals {
    /// Relative violation of the mean-value conditions on the weak cells with
    /// μ < 1 and on the Robin faces.
    pub fn mean_violation(&self, part: &Partition, mu: &MuField) -> Result<MeanViolation> {
        let cl = part.classification()?;
        let cell = cl
            .weak
            .iter()
            .filter(|&&c| mu.at(c) < 1.0)
            .map(|&c| self.source_rest_integral[c].abs() / (1.0 + self.source_rest_scale[c]))
            .fold(0.0, f64::max);
        let face = self
            .boundary_integral
            .iter()
            .zip(&self.boundary_scale)
            .map(|(i, s)| i.abs() / (1.0 + s))
            .fold(0.0, f64::max);
        Ok(MeanViolation { cell, face })
    }

    pub fn check_means(&self, part: &Partition, mu: &MuField, tol: f64) -> Result<()> {
        let v = self.mean_violation(part, mu)?;
        if v.cell > tol || v.face > tol {
            return Err(Error::Hypothesis(format!(
                "mean-value condition violated at t = {:.6}: cell {:.3e}, Robin face {:.3e} (tolerance {tol:.1e})",
                self.t, v.cell, v.face
            )));
        }
        Ok(())
    }
}

/// Summary of a mean-value correction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectionReport {
    /// ‖q' − q‖ over all storage times.
    pub correction_norm: f64,
    /// Largest relative violation after correction.
    pub max_violation: f64,
    pub constrained_cells: usize,
}

/// Corrects y so that r_{f,1−μ} has zero mean on every weak cell with μ < 1
/// and r_F has zero mean on every Robin face, at every flux storage time.
/// Robin-face values are fixed by their condition; the remaining face values
/// change by the least Euclidean amount that satisfies the cell conditions.
pub fn enforce_mean_zero(
    y: &FluxField,
    v: &dyn ScalarField,
    w: Option<&dyn ScalarField>,
    spec: &ProblemSpec,
    mu: &MuField,
    order: usize,
) -> Result<(FluxField, CorrectionReport)> {
    let part = y.partition().clone();
    mu.validate(&part)?;
    let cl = part.classification()?;
    let constrained: Vec<usize> = cl.weak.iter().copied().filter(|&c| mu.at(c) < 1.0).collect();
    let mut row = vec![None; part.n_cells()];
    for (k, &c) in constrained.iter().enumerate() {
        row[c] = Some(k);
    }
    let free = |f: usize| part.faces[f].kind != FaceKind::Robin;

    // C has one row per constrained cell with entries s|F| on its free faces.
    check_feasible(&part, &constrained, &row)?;
    let m = constrained.len();
    let mut cct = Triplets::new(m, m);
    for f in 0..part.n_faces() {
        if !free(f) {
            continue;
        }
        let face = &part.faces[f];
        let entries: Vec<(usize, f64)> = face
            .cells
            .iter()
            .filter_map(|&c| row[c].map(|r| (r, sign(&part, c, f) * face.measure)))
            .collect();
        for &(a, ca) in &entries {
            for &(b, cb) in &entries {
                cct.push(a, b, ca * cb);
            }
        }
    }
    let solver = if m > 0 { Some(SpdSolver::new(&cct.to_csr())?) } else { None };

    let times = y.times().clone();
    let mut out = y.clone();
    let mut change = KahanSum::new();
    let mut max_violation: f64 = 0.0;
    let zero_mu = MuField::constant(part.n_cells(), 0.0);
    for (k, tp) in times.flux_points().iter().enumerate() {
        let t = tp.t;
        let mut q = y.dofs()[k].clone();
        let probe = compute_residuals(&part, v, y, w, spec, &zero_mu)?;
        for &f in &part.robin_faces {
            let face = &part.faces[f];
            let mut s = KahanSum::new();
            for (x, wq) in face.quadrature(&part.nodes, order) {
                s.add(wq * probe.boundary_part(&At { cell: face.cells[0], x, t }));
            }
            q[f] = sign(&part, face.cells[0], f) * s.value() / face.measure;
        }
        if let Some(solver) = &solver {
            let mut rhs = DVector::zeros(m);
            for (r, &c) in constrained.iter().enumerate() {
                let cell = &part.subdomains[c];
                let mut g = KahanSum::new();
                for (x, wq) in cell.quadrature(order) {
                    g.add(wq * probe.source_part(&At { cell: c, x, t }));
                }
                // ∫ div y = Σ s|F|q over the cell's faces.
                let div: f64 = cell
                    .faces
                    .iter()
                    .enumerate()
                    .map(|(i, &f)| cell.face_signs[i] * part.faces[f].measure * q[f])
                    .sum();
                rhs[r] = -g.value() - div;
            }
            let lambda = solver.solve(&rhs)?;
            for f in 0..part.n_faces() {
                if !free(f) {
                    continue;
                }
                let face = &part.faces[f];
                for &c in &face.cells {
                    if let Some(r) = row[c] {
                        q[f] += sign(&part, c, f) * face.measure * lambda[r];
                    }
                }
            }
        }
        change.add((&q - &y.dofs()[k]).norm_squared());
        out.dofs_mut()[k] = q;
    }
    let res = compute_residuals(&part, v, &out, w, spec, mu)?;
    for tp in times.flux_points() {
        let viol = res.local(tp.t, order)?.mean_violation(&part, mu)?;
        max_violation = max_violation.max(viol.cell).max(viol.face);
    }
    Ok((out, CorrectionReport { correction_norm: change.value().sqrt(), max_violation, constrained_cells: m }))
}

fn sign(part: &Partition, cell: usize, face: usize) -> f64 {
    part.subdomains[cell].face_signs[part.local_face(cell, face)]
}

/// Every connected group of constrained cells needs a free face leading out
/// of the group (a Dirichlet face or a face to an unconstrained cell).
fn check_feasible(part: &Partition, constrained: &[usize], row: &[Option<usize>]) -> Result<()> {
    let m = constrained.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut i = i;
        while p[i] != r {
            let next = p[i];
            p[i] = r;
            i = next;
        }
        r
    }
    let mut grounded = vec![false; m];
    for face in &part.faces {
        let rows: Vec<usize> = face.cells.iter().filter_map(|&c| row[c]).collect();
        match (face.kind, rows.as_slice()) {
            (FaceKind::Robin, _) | (_, []) => {}
            (_, [a, b]) => {
                let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
                parent[ra] = rb;
            }
            (_, [a]) => grounded[*a] = true,
            _ => {}
        }
    }
    let mut root_grounded = vec![false; m];
    for i in 0..m {
        if grounded[i] {
            let r = find(&mut parent, i);
            root_grounded[r] = true;
        }
    }
    let bad: Vec<usize> = (0..m)
        .filter(|&i| {
            let r = find(&mut parent, i);
            !root_grounded[r]
        })
        .map(|i| constrained[i])
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        let faces = part
            .robin_faces
            .iter()
            .copied()
            .filter(|&f| bad.contains(&part.faces[f].cells[0]))
            .collect();
        Err(Error::InfeasibleCorrection { cells: bad, faces })
    }
}

/// The four localized residual quantities at each time point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualComplexes {
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    /// Σ_{O_P} (|Ω_l|/P²){r_{f,1−μ}}².
    pub op_mean: Vec<f64>,
    /// Σ_{O_P} C²_P/λ̲_A ‖r_{f,1−μ}‖².
    pub op_norm: Vec<f64>,
    /// Σ_{O_0} C²_P/λ̲_A ‖r_{f,1−μ}‖².
    pub o0: Vec<f64>,
    /// Σ_j m_j C²_Γj/λ̲_A ‖r_F‖²_j.
    pub sr: Vec<f64>,
}

/// Complexes from local residual integrals; `lambda_min` is λ̲_A.
pub fn complexes_from_local(
    part: &Partition,
    constants: &ConstantSet,
    lambda_min: f64,
    local: &LocalResiduals,
) -> Result<(f64, f64, f64, f64)> {
    let cl = part.classification()?;
    let p2 = cl.threshold * cl.threshold;
    let mut op_mean = KahanSum::new();
    let mut op_norm = KahanSum::new();
    for &c in &cl.strong {
        let area = part.subdomains[c].measure;
        op_mean.add(local.source_rest_integral[c].powi(2) / (area * p2));
        op_norm.add(constants.poincare[c].powi(2) / lambda_min * local.source_rest_sq[c]);
    }
    let mut o0 = KahanSum::new();
    for &c in &cl.weak {
        o0.add(constants.poincare[c].powi(2) / lambda_min * local.source_rest_sq[c]);
    }
    let mult = part.robin_multiplicity();
    let mut sr = KahanSum::new();
    for (j, &f) in part.robin_faces.iter().enumerate() {
        let m = mult[part.faces[f].cells[0]] as f64;
        sr.add(m * constants.face_trace[j].powi(2) / lambda_min * local.boundary_sq[j]);
    }
    Ok((op_mean.value(), op_norm.value(), o0.value(), sr.value()))
}

/// Evaluates the complexes at the flux storage times, refusing when the
/// mean-value conditions fail by more than `tol` (relative).
pub fn assemble_complexes(
    residuals: &ResidualSet,
    constants: &ConstantSet,
    times: &crate::fields::TimeGrid,
    order: usize,
    tol: f64,
) -> Result<(ResidualComplexes, Vec<LocalResiduals>)> {
    let part = residuals.part;
    let lambda = residuals.spec.coefficients.lambda_min;
    let mut out = ResidualComplexes {
        times: Vec::new(),
        weights: Vec::new(),
        op_mean: Vec::new(),
        op_norm: Vec::new(),
        o0: Vec::new(),
        sr: Vec::new(),
    };
    let mut locals = Vec::new();
    for tp in times.flux_points() {
        let local = residuals.local(tp.t, order)?;
        local.check_means(part, residuals.mu, tol)?;
        let (a, b, c, d) = complexes_from_local(part, constants, lambda, &local)?;
        out.times.push(tp.t);
        out.weights.push(tp.weight);
        out.op_mean.push(a);
        out.op_norm.push(b);
        out.o0.push(c);
        out.sr.push(d);
        locals.push(local);
    }
    Ok((out, locals))
}
