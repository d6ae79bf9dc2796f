//! Poincaré, Friedrichs and trace constants: closed forms for the supported
//! cell shapes and a discrete eigenvalue oracle used to cross-check them and
//! to compute the global constants of a domain.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DVector, Matrix3};
use nalgebra_sparse::CsrMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem;
use crate::linalg::{pcg, quad_form, restrict, spmv, SpdSolver, Triplets, CHOLESKY_FILL_LIMIT};
use crate::mesh::{
    build_partition, BoundaryKind, DomainSpec, FaceKind, Geometry, Partition, Point, Shape, Subdomain,
};

/// Factor applied to oracle constants so that discretisation bias (the
/// conforming Rayleigh minimum overestimates eigenvalues) cannot make a bound
/// optimistic.
pub const ORACLE_SAFETY: f64 = 1.05;

/// Default oracle resolution (cells per axis).
pub const ORACLE_GRID: usize = 64;

/// Payne–Weinberger upper bound diam/π of the Poincaré constant of a convex
/// cell.
pub fn payne_weinberger_bound(diameter: f64) -> f64 {
    diameter / PI
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Trace constant of the rectangle (0,h1)×(0,h2) for the face x1 = 0.
pub fn trace_constant_rect2(h1: f64, h2: f64) -> Result<f64> {
    check_positive("h1", h1)?;
    check_positive("h2", h2)?;
    Ok((PI / h2 * (PI * h1 / h2).tanh()).powf(-0.5))
}

/// Trace constant of the box (0,h1)×(0,h2)×(0,h3) for the face x1 = 0.
pub fn trace_constant_rect3(h1: f64, h2: f64, h3: f64) -> Result<f64> {
    check_positive("h3", h3)?;
    check_positive("h2", h2)?;
    trace_constant_rect2(h1, h2.max(h3))
}

/// Root ζ₁ of tan z + tanh z = 0 in (0, π) and σ₁ = ζ₁ tanh ζ₁.
pub fn leg_root() -> (f64, f64) {
    static ROOT: OnceLock<(f64, f64)> = OnceLock::new();
    *ROOT.get_or_init(|| {
        let g = |z: f64| z.tan() + z.tanh();
        // tan jumps from +∞ to −∞ at π/2, so the sign change is on (π/2, π)
        let (mut a, mut b) = (PI / 2.0 + 1e-9, PI - 1e-9);
        while b - a > 1e-13 {
            let m = 0.5 * (a + b);
            if g(a) * g(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        let z = 0.5 * (a + b);
        (z, z * z.tanh())
    })
}

/// Trace constant of the right isosceles triangle with legs h for a leg.
pub fn trace_constant_right_triangle_leg(h: f64) -> Result<f64> {
    check_positive("h", h)?;
    Ok((h / leg_root().1).sqrt())
}

/// Trace constant of a right isosceles triangle for the hypotenuse, h being
/// the hypotenuse length (the eigenvalue oracle rules out the leg length).
pub fn trace_constant_isosceles_hypotenuse(h: f64) -> Result<f64> {
    check_positive("h", h)?;
    Ok((h / 2.0).sqrt())
}

/// Triangle with vertices (0,0), (h1,0), (h2 cos α, h2 sin α); the
/// zero-mean side is the one of length h1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriangleGeometry {
    pub h1: f64,
    pub h2: f64,
    pub alpha: f64,
}

impl TriangleGeometry {
    pub fn new(h1: f64, h2: f64, alpha: f64) -> Result<Self> {
        check_positive("h1", h1)?;
        check_positive("h2", h2)?;
        if !(alpha > 0.0 && alpha < PI) || alpha.sin() <= 0.0 {
            return Err(Error::Geometry(format!("degenerate triangle angle {alpha}")));
        }
        Ok(Self { h1, h2, alpha })
    }

    /// Geometry seen from vertex `apex` of a side `a`–`b` and third vertex `c`.
    pub fn from_points(a: &Point, b: &Point, c: &Point) -> Result<Self> {
        let u = b - a;
        let v = c - a;
        let cos = (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0);
        Self::new(u.norm(), v.norm(), cos.acos())
    }

    pub fn rho(&self) -> f64 {
        self.h2 / self.h1
    }

    pub fn mu(&self) -> f64 {
        let r2 = self.rho().powi(2);
        0.5 * (1.0 + r2 + (1.0 + r2 * r2 + 2.0 * (2.0 * self.alpha).cos() * r2).max(0.0).sqrt())
    }

    pub fn c_hat(&self) -> f64 {
        (self.mu() / (self.rho() * self.alpha.sin())).sqrt()
    }
}

/// Scale-free trace constant Ĉ_TT·Ĉ(ρ, α) of a general triangle; the trace
/// bound is this value times h1^{1/2}.
pub fn trace_constant_general_triangle(geom: &TriangleGeometry, base_constant: f64) -> Result<f64> {
    check_positive("reference constant", base_constant)?;
    Ok(base_constant * geom.c_hat())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Closed-form trace constant of a cell for the zero-mean face `local_face`.
pub fn local_trace_constant(cell: &Subdomain, local_face: usize) -> Result<f64> {
    match cell.shape {
        Shape::Interval { .. } => Err(Error::UnsupportedShape("no trace constant for intervals".into())),
        Shape::Rectangle { h1, h2 } => {
            let h = [h1, h2];
            let k = local_face / 2;
            trace_constant_rect2(h[k], h[1 - k])
        }
        Shape::Box { h1, h2, h3 } => {
            let h = [h1, h2, h3];
            let k = local_face / 2;
            let t: Vec<f64> = (0..3).filter(|&j| j != k).map(|j| h[j]).collect();
            trace_constant_rect3(h[k], t[0], t[1])
        }
        Shape::Triangle { .. } => {
            let v = &cell.vertices;
            let opp = v[local_face];
            let a = v[(local_face + 1) % 3];
            let b = v[(local_face + 2) % 3];
            let (la, lb) = ((a - opp).norm(), (b - opp).norm());
            let base = (b - a).norm();
            if close(la, lb) && close(la * la + lb * lb, base * base) {
                return trace_constant_isosceles_hypotenuse(base);
            }
            // leg of a right isosceles triangle: right angle at one end of the face
            for (p, q) in [(a, b), (b, a)] {
                let leg = opp - p;
                if close(base, leg.norm()) && leg.dot(&(q - p)).abs() <= 1e-9 * base * base {
                    return trace_constant_right_triangle_leg(base);
                }
            }
            let leg = leg_root_constant();
            let c1 = trace_constant_general_triangle(&TriangleGeometry::from_points(&a, &b, &opp)?, leg)?;
            let c2 = trace_constant_general_triangle(&TriangleGeometry::from_points(&b, &a, &opp)?, leg)?;
            Ok(c1.min(c2) * base.sqrt())
        }
    }
}

fn leg_root_constant() -> f64 {
    (1.0 / leg_root().1).sqrt()
}

/// Uses the constant of a smaller cell sharing the face as a bound for a
/// larger one. `face` is the local face index of `inner`.
pub fn monotonic_trace_bound(inner: &Subdomain, outer: &Subdomain, face: usize) -> Result<f64> {
    if !inner.vertices.iter().all(|v| outer.contains(v)) {
        return Err(Error::Geometry("inner cell is not contained in the outer cell".into()));
    }
    local_trace_constant(inner, face)
}

/// Side condition of a discrete Rayleigh-quotient problem.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleConstraint {
    /// ‖w‖ ≤ C‖∇w‖ for w with zero mean over the cell.
    ZeroMeanVolume,
    /// ‖w‖_Γ ≤ C‖∇w‖ for w with zero mean over the listed sides.
    ZeroMeanTrace(Vec<usize>),
    /// ‖w‖ ≤ C‖∇w‖ for w vanishing on the listed sides.
    ZeroDirichletTrace(Vec<usize>),
}

/// Sharp discrete constant λ^{-1/2} of a cell shape for the given side
/// condition, computed on `grid` cells per axis. Sides follow the domain
/// side numbering of the shape (for triangles, side k runs from vertex k to
/// vertex k + 1).
pub fn eigenvalue_oracle(shape: &Shape, constraint: &OracleConstraint, grid: usize) -> Result<f64> {
    if grid == 0 {
        return Err(Error::InvalidParameter("oracle grid must be at least 1".into()));
    }
    if let Shape::Interval { h } = *shape {
        return interval_oracle(h, constraint, grid);
    }
    let mut domain = shape.as_domain(BoundaryKind::Robin)?;
    if let OracleConstraint::ZeroDirichletTrace(sides) = constraint {
        for &s in sides {
            let side = domain
                .sides
                .get_mut(s)
                .ok_or_else(|| Error::InvalidParameter(format!("shape has no side {s}")))?;
            side.kind = BoundaryKind::Dirichlet;
        }
        if sides.len() == domain.sides.len() {
            // keep one Robin side for validation; the Dirichlet condition makes it irrelevant
            return dirichlet_everywhere(&domain, grid);
        }
    }
    let part = build_partition(&domain, &[grid])?;
    let problem = match constraint {
        OracleConstraint::ZeroMeanVolume => Rayleigh { denominator: None, mean_zero: true },
        OracleConstraint::ZeroMeanTrace(sides) => {
            let faces = faces_on_sides(&part, sides);
            if faces.is_empty() {
                return Err(Error::InvalidParameter("zero-mean trace on no side".into()));
            }
            Rayleigh { denominator: Some(faces), mean_zero: true }
        }
        OracleConstraint::ZeroDirichletTrace(_) => Rayleigh { denominator: None, mean_zero: false },
    };
    Ok(smallest_eigenvalue(&part, &problem)?.powf(-0.5))
}

fn dirichlet_everywhere(domain: &DomainSpec, grid: usize) -> Result<f64> {
    let mut d = domain.clone();
    d.sides[0].kind = BoundaryKind::Robin;
    let mut part = build_partition(&d, &[grid])?;
    // the single Robin side also becomes Dirichlet for the eigenproblem
    let robin = std::mem::take(&mut part.robin_faces);
    for f in robin {
        part.faces[f].kind = FaceKind::Dirichlet;
        for &n in &part.faces[f].nodes {
            part.dirichlet_nodes[n] = true;
        }
        part.dirichlet_faces.push(f);
    }
    let problem = Rayleigh { denominator: None, mean_zero: false };
    Ok(smallest_eigenvalue(&part, &problem)?.powf(-0.5))
}

fn faces_on_sides(part: &Partition, sides: &[usize]) -> Vec<usize> {
    part.faces
        .iter()
        .filter(|f| f.side.is_some_and(|s| sides.contains(&s)))
        .map(|f| f.id)
        .collect()
}

fn interval_oracle(h: f64, constraint: &OracleConstraint, grid: usize) -> Result<f64> {
    check_positive("h", h)?;
    let n = grid + 1;
    let dx = h / grid as f64;
    let mut k = Triplets::new(n, n);
    let mut m = Triplets::new(n, n);
    for e in 0..grid {
        for (i, j, kv, mv) in [(0, 0, 1.0, 2.0), (0, 1, -1.0, 1.0), (1, 0, -1.0, 1.0), (1, 1, 1.0, 2.0)] {
            k.push(e + i, e + j, kv / dx);
            m.push(e + i, e + j, mv * dx / 6.0);
        }
    }
    let k = k.to_csr();
    let mut free = vec![true; n];
    let (mden, mean_zero) = match constraint {
        OracleConstraint::ZeroMeanVolume => (m.to_csr(), true),
        OracleConstraint::ZeroMeanTrace(sides) => {
            let mut b = Triplets::new(n, n);
            for &s in sides {
                let node = if s == 0 { 0 } else { n - 1 };
                b.push(node, node, 1.0);
            }
            (b.to_csr(), true)
        }
        OracleConstraint::ZeroDirichletTrace(sides) => {
            for &s in sides {
                free[if s == 0 { 0 } else { n - 1 }] = false;
            }
            (m.to_csr(), false)
        }
    };
    Ok(inverse_iteration(&k, &mden, &free, mean_zero)?.powf(-0.5))
}

/// Rayleigh quotient ‖∇w‖² / ‖w‖²_den with Dirichlet nodes of the partition
/// removed; `denominator` lists faces for a boundary norm (volume otherwise).
struct Rayleigh {
    denominator: Option<Vec<usize>>,
    mean_zero: bool,
}

fn smallest_eigenvalue(part: &Partition, problem: &Rayleigh) -> Result<f64> {
    let k = fem::stiffness(part, &|_| Matrix3::identity(), 2);
    let m = match &problem.denominator {
        None => fem::mass(part, &|_| 1.0, 2),
        Some(faces) => fem::boundary_mass(part, faces, &|_| 1.0, 2),
    };
    let free: Vec<bool> = part.dirichlet_nodes.iter().map(|d| !d).collect();
    inverse_iteration(&k, &m, &free, problem.mean_zero)
}

/// Linear solver for K y = b; handles the singular (mean-zero) case by
/// pinning one unknown (direct) or by projected CG (iterative).
enum StiffnessSolver {
    Direct { solver: SpdSolver, pinned: bool },
    Projected { k: CsrMatrix<f64> },
}

impl StiffnessSolver {
    fn new(k: &CsrMatrix<f64>, singular: bool) -> Result<Self> {
        let n = k.nrows();
        let bw = k
            .row_iter()
            .enumerate()
            .flat_map(|(i, r)| r.col_indices().iter().map(move |&j| i.abs_diff(j)).collect::<Vec<_>>())
            .max()
            .unwrap_or(0);
        if n.saturating_mul(bw + 1) <= CHOLESKY_FILL_LIMIT {
            if singular {
                let index: Vec<Option<usize>> = (0..n).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
                let reduced = restrict(k, &index, n - 1);
                Ok(StiffnessSolver::Direct { solver: SpdSolver::new(&reduced)?, pinned: true })
            } else {
                Ok(StiffnessSolver::Direct { solver: SpdSolver::new(k)?, pinned: false })
            }
        } else if singular {
            Ok(StiffnessSolver::Projected { k: k.clone() })
        } else {
            Ok(StiffnessSolver::Direct { solver: SpdSolver::new(k)?, pinned: false })
        }
    }

    fn solve(&self, b: &DVector<f64>, guess: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            StiffnessSolver::Direct { solver, pinned: false } => match solver {
                SpdSolver::Iterative { matrix, .. } => {
                    Ok(pcg(matrix, b, Some(guess), 1e-11, 20 * b.len() + 100, None)?.x)
                }
                _ => solver.solve(b),
            },
            StiffnessSolver::Direct { solver, pinned: true } => {
                let rb = DVector::from_iterator(b.len() - 1, b.iter().skip(1).copied());
                let y = solver.solve(&rb)?;
                let mut out = DVector::zeros(b.len());
                out.rows_mut(1, b.len() - 1).copy_from(&y);
                Ok(out)
            }
            StiffnessSolver::Projected { k } => {
                let project = |x: &mut DVector<f64>| {
                    let mean = x.mean();
                    x.add_scalar_mut(-mean);
                };
                Ok(pcg(k, b, Some(guess), 1e-11, 20 * b.len() + 100, Some(&project))?.x)
            }
        }
    }
}

/// Smallest eigenvalue of K x = λ M x on the free unknowns, restricted to
/// M-mean-zero vectors when `mean_zero` is set, by inverse iteration.
pub fn inverse_iteration(k: &CsrMatrix<f64>, m: &CsrMatrix<f64>, free: &[bool], mean_zero: bool) -> Result<f64> {
    let mut index = vec![None; free.len()];
    let mut n = 0;
    for (i, &f) in free.iter().enumerate() {
        if f {
            index[i] = Some(n);
            n += 1;
        }
    }
    if n < 2 {
        return Err(Error::InvalidParameter("eigenproblem has fewer than two unknowns".into()));
    }
    let k = restrict(k, &index, n);
    let m = restrict(m, &index, n);
    let c = spmv(&m, &DVector::from_element(n, 1.0));
    let c_total = c.sum();
    let constrain = |x: &mut DVector<f64>| {
        if mean_zero {
            let s = c.dot(x) / c_total;
            x.add_scalar_mut(-s);
        }
    };
    let solver = StiffnessSolver::new(&k, mean_zero)?;
    // deterministic, non-smooth start so every eigenvector is represented
    let mut x = DVector::from_fn(n, |i, _| ((i as u64 * 2_654_435_761) % 1000) as f64 / 1000.0 - 0.5);
    constrain(&mut x);
    let mut lambda = f64::INFINITY;
    let max_iter = 2000;
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let mx = spmv(&m, &x);
        let norm = mx.dot(&x).sqrt();
        if !(norm > 0.0) {
            return Err(Error::Solver("eigenvector lost its denominator norm".into()));
        }
        x /= norm;
        let b = spmv(&m, &x);
        let guess = if lambda.is_finite() { &x / lambda } else { DVector::zeros(n) };
        let mut y = solver.solve(&b, &guess)?;
        constrain(&mut y);
        let new = quad_form(&k, &y) / quad_form(&m, &y);
        change = ((new - lambda) / new).abs();
        lambda = new;
        x = y;
        if change < 1e-11 {
            return Ok(lambda);
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, change })
}

/// Which global constant of a domain to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalConstant {
    /// ‖w‖ ≤ C‖∇w‖ on V₀.
    Friedrichs,
    /// ‖w‖_{Γ_R} ≤ C‖∇w‖ on V₀.
    RobinTrace,
}

/// Discrete sharp global constant on `grid` cells per axis (refinement level
/// for polygons). Requires a non-empty Dirichlet part.
pub fn domain_oracle(domain: &DomainSpec, which: GlobalConstant, grid: usize) -> Result<f64> {
    if !domain.has_dirichlet() {
        return Err(Error::Hypothesis(
            "global Friedrichs/trace constants need a non-empty Dirichlet part".into(),
        ));
    }
    let part = build_partition(domain, &[grid])?;
    let problem = match which {
        GlobalConstant::Friedrichs => Rayleigh { denominator: None, mean_zero: false },
        GlobalConstant::RobinTrace => Rayleigh { denominator: Some(part.robin_faces.clone()), mean_zero: false },
    };
    Ok(smallest_eigenvalue(&part, &problem)?.powf(-0.5))
}

/// Conservative closed-form global constants for boxes with at least one
/// fully Dirichlet side: (C_F, C_ΓR).
pub fn closed_form_global(domain: &DomainSpec) -> Result<(f64, f64)> {
    let Geometry::Box { lower, upper } = &domain.geometry else {
        return Err(Error::UnsupportedShape(
            "closed-form global constants are only available for boxes".into(),
        ));
    };
    let d = lower.len();
    let full_dirichlet =
        |s: usize| domain.sides[s].kind == BoundaryKind::Dirichlet && domain.sides[s].patches.is_empty();
    let mut best: Option<f64> = None;
    for k in 0..d {
        let l = upper[k] - lower[k];
        let ends = full_dirichlet(2 * k) as usize + full_dirichlet(2 * k + 1) as usize;
        let c = match ends {
            2 => l / PI,
            1 => 2.0 * l / PI,
            _ => continue,
        };
        best = Some(best.map_or(c, |b: f64| b.min(c)));
    }
    let cf = best.ok_or_else(|| {
        Error::UnsupportedShape("closed-form Friedrichs constant needs a fully Dirichlet side".into())
    })?;
    let mut trace_sq = 0.0;
    for (s, spec) in domain.sides.iter().enumerate() {
        let robin = spec.kind == BoundaryKind::Robin || spec.patches.iter().any(|p| p.kind == BoundaryKind::Robin);
        if robin {
            let l = upper[s / 2] - lower[s / 2];
            trace_sq += cf * cf / l + 2.0 * cf;
        }
    }
    Ok((cf, trace_sq.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantStrategy {
    ClosedForm,
    Oracle,
    Hybrid,
}

/// Global and local constants of a classified partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantSet {
    pub strategy: ConstantStrategy,
    /// C_FΩ (absent without a Dirichlet part).
    pub friedrichs: Option<f64>,
    /// C_ΓR (absent without a Dirichlet part).
    pub robin_trace: Option<f64>,
    /// C_PΩi per subdomain.
    pub poincare: Vec<f64>,
    /// C_ΓΩj per Robin face, aligned with `Partition::robin_faces`.
    pub face_trace: Vec<f64>,
    pub poincare_max: f64,
    pub poincare_min: f64,
    pub trace_max: f64,
    pub trace_min: f64,
    /// max over O_P of |Ω_l|/P² (0 when O_P is empty).
    pub strong_cell_ratio: f64,
}

impl ConstantSet {
    /// Recomputes the aggregates from the per-cell and per-face maps.
    pub fn from_parts(
        strategy: ConstantStrategy,
        friedrichs: Option<f64>,
        robin_trace: Option<f64>,
        poincare: Vec<f64>,
        face_trace: Vec<f64>,
        partition: &Partition,
    ) -> Result<Self> {
        let cl = partition.classification()?;
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let strong_cell_ratio = cl
            .strong
            .iter()
            .map(|&l| partition.subdomains[l].measure / (cl.threshold * cl.threshold))
            .fold(0.0, f64::max);
        Ok(Self {
            strategy,
            friedrichs,
            robin_trace,
            poincare_max: max(&poincare),
            poincare_min: min(&poincare),
            trace_max: max(&face_trace),
            trace_min: min(&face_trace),
            poincare,
            face_trace,
            strong_cell_ratio,
        })
    }
}

fn shape_key(cell: &Subdomain, face: Option<usize>) -> (Vec<i64>, Option<usize>) {
    let q = |v: f64| (v * 1e9).round() as i64;
    let mut key = Vec::new();
    let base = cell.vertices[0];
    for v in &cell.vertices {
        let r = v - base;
        key.extend([q(r.x), q(r.y), q(r.z)]);
    }
    (key, face)
}

/// Fills the constant set for a classified partition.
pub fn assemble_constant_set(
    partition: &Partition,
    domain: &DomainSpec,
    strategy: ConstantStrategy,
    grid: usize,
) -> Result<ConstantSet> {
    let mut poincare = Vec::with_capacity(partition.n_cells());
    let mut face_trace = Vec::with_capacity(partition.robin_faces.len());
    let mut cache: HashMap<(Vec<i64>, Option<usize>), f64> = HashMap::new();
    let cell_oracle = strategy == ConstantStrategy::Oracle;
    for cell in &partition.subdomains {
        let c = if cell_oracle {
            let key = shape_key(cell, None);
            match cache.get(&key) {
                Some(&c) => c,
                None => {
                    let c = ORACLE_SAFETY * eigenvalue_oracle(&cell.shape, &OracleConstraint::ZeroMeanVolume, grid)?;
                    cache.insert(key, c);
                    c
                }
            }
        } else {
            payne_weinberger_bound(cell.diameter)
        };
        poincare.push(c);
    }
    for &f in &partition.robin_faces {
        let cell = &partition.subdomains[partition.faces[f].cells[0]];
        let local = partition.local_face(cell.id, f);
        let c = if cell_oracle {
            let key = shape_key(cell, Some(local));
            match cache.get(&key) {
                Some(&c) => c,
                None => {
                    let side = if cell.is_triangle() { (local + 1) % 3 } else { local };
                    let c = ORACLE_SAFETY
                        * eigenvalue_oracle(&cell.shape, &OracleConstraint::ZeroMeanTrace(vec![side]), grid)?;
                    cache.insert(key, c);
                    c
                }
            }
        } else {
            local_trace_constant(cell, local)?
        };
        face_trace.push(c);
    }
    let (cf, cg) = if !domain.has_dirichlet() {
        (None, None)
    } else {
        match strategy {
            // no closed form off boxes: the global-constant majorant is skipped
            ConstantStrategy::ClosedForm => match closed_form_global(domain) {
                Ok((a, b)) => (Some(a), Some(b)),
                Err(Error::UnsupportedShape(_)) => (None, None),
                Err(e) => return Err(e),
            },
            ConstantStrategy::Oracle | ConstantStrategy::Hybrid => (
                Some(ORACLE_SAFETY * domain_oracle(domain, GlobalConstant::Friedrichs, grid)?),
                Some(ORACLE_SAFETY * domain_oracle(domain, GlobalConstant::RobinTrace, grid)?),
            ),
        }
    };
    ConstantSet::from_parts(strategy, cf, cg, poincare, face_trace, partition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_forms() {
        assert_relative_eq!(trace_constant_rect2(1.0, 1.0).unwrap(), 0.56524, max_relative = 1e-4);
        assert_relative_eq!(trace_constant_rect2(0.5, 1.0).unwrap(), 0.589121, max_relative = 1e-5);
        assert_relative_eq!(trace_constant_rect2(50.0, 1.0).unwrap(), PI.powf(-0.5), max_relative = 1e-10);
        assert_relative_eq!(trace_constant_rect3(1.0, 2.0, 1.0).unwrap(), 0.833143, max_relative = 1e-5);
        assert_relative_eq!(trace_constant_rect3(2.0, 1.0, 1.0).unwrap(), 0.564192, max_relative = 1e-5);
        let (z, s) = leg_root();
        assert_relative_eq!(z, 2.36502, max_relative = 1e-5);
        assert_relative_eq!(s, 2.323638, max_relative = 1e-6);
        assert_relative_eq!(trace_constant_right_triangle_leg(1.0).unwrap(), 0.656018, max_relative = 1e-5);
        assert_relative_eq!(
            trace_constant_right_triangle_leg(4.0).unwrap(),
            2.0 * trace_constant_right_triangle_leg(1.0).unwrap(),
            max_relative = 1e-14
        );
        assert_eq!(trace_constant_isosceles_hypotenuse(2.0).unwrap(), 1.0);
        assert_eq!(trace_constant_isosceles_hypotenuse(8.0).unwrap(), 2.0);
        assert!(trace_constant_rect2(0.0, 1.0).is_err());
    }

    #[test]
    fn triangle_scaling() {
        let g = TriangleGeometry::new(1.0, 1.0, PI / 2.0).unwrap();
        assert_relative_eq!(g.mu(), 1.0, max_relative = 1e-14);
        assert_eq!(trace_constant_general_triangle(&g, 0.7).unwrap(), 0.7 * g.c_hat());
        assert_relative_eq!(g.c_hat(), 1.0, max_relative = 1e-14);
        let g = TriangleGeometry::new(1.0, 1.0, PI / 3.0).unwrap();
        assert_relative_eq!(g.mu(), 1.5, max_relative = 1e-14);
        assert_relative_eq!(g.c_hat(), 1.31607, max_relative = 1e-5);
        // cos 2α = -1 here, so μ = (5 + 3)/2
        let g = TriangleGeometry::new(1.0, 2.0, PI / 2.0).unwrap();
        assert_relative_eq!(g.mu(), 4.0, max_relative = 1e-14);
        assert_relative_eq!(g.c_hat(), 2f64.sqrt(), max_relative = 1e-14);
        assert!(TriangleGeometry::new(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn interval_oracles() {
        let c = eigenvalue_oracle(&Shape::Interval { h: 1.0 }, &OracleConstraint::ZeroDirichletTrace(vec![0, 1]), 200)
            .unwrap();
        assert_relative_eq!(c, 1.0 / PI, max_relative = 1e-3);
        let c = eigenvalue_oracle(&Shape::Interval { h: 1.0 }, &OracleConstraint::ZeroMeanVolume, 200).unwrap();
        assert_relative_eq!(c, 1.0 / PI, max_relative = 1e-3);
    }

    #[test]
    fn square_oracles() {
        let sq = Shape::Rectangle { h1: 1.0, h2: 1.0 };
        let c = eigenvalue_oracle(&sq, &OracleConstraint::ZeroMeanVolume, 32).unwrap();
        assert_relative_eq!(c, 1.0 / PI, max_relative = 1e-2);
        let c = eigenvalue_oracle(&sq, &OracleConstraint::ZeroMeanTrace(vec![0]), 32).unwrap();
        assert_relative_eq!(c, 0.56524, max_relative = 1e-2);
        assert!(c <= 0.56524 * 1.01);
        let c = eigenvalue_oracle(&sq, &OracleConstraint::ZeroDirichletTrace(vec![0, 1, 2, 3]), 32).unwrap();
        assert_relative_eq!(c, 1.0 / (PI * 2f64.sqrt()), max_relative = 1e-2);
    }

    #[test]
    fn local_triangle_constants() {
        let d = DomainSpec::polygon(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![BoundaryKind::Robin; 3]);
        let p = build_partition(&d, &[1]).unwrap();
        let cell = &p.subdomains[0];
        // face 0 is the hypotenuse, faces 1 and 2 are legs
        assert_relative_eq!(local_trace_constant(cell, 0).unwrap(), 0.5f64.sqrt().sqrt(), max_relative = 1e-12);
        assert_relative_eq!(local_trace_constant(cell, 1).unwrap(), 0.656018, max_relative = 1e-5);
        assert_relative_eq!(local_trace_constant(cell, 2).unwrap(), 0.656018, max_relative = 1e-5);
    }

    #[test]
    fn monotonicity_bound() {
        let d = DomainSpec::rectangle([0.0, 0.0], [2.0, 1.0], [BoundaryKind::Robin; 4]);
        let outer = build_partition(&d, &[1]).unwrap().subdomains[0].clone();
        let inner = build_partition(&DomainSpec::rectangle([0.0, 0.0], [1.0, 1.0], [BoundaryKind::Robin; 4]), &[1])
            .unwrap()
            .subdomains[0]
            .clone();
        assert_relative_eq!(monotonic_trace_bound(&inner, &outer, 0).unwrap(), 0.56524, max_relative = 1e-4);
        assert_eq!(
            monotonic_trace_bound(&inner, &inner, 0).unwrap(),
            local_trace_constant(&inner, 0).unwrap()
        );
        assert!(monotonic_trace_bound(&outer, &inner, 0).is_err());
    }

    #[test]
    fn closed_form_global_constants() {
        use BoundaryKind::*;
        let d = DomainSpec::rectangle([0.0, 0.0], [1.0, 1.0], [Dirichlet, Dirichlet, Robin, Robin]);
        let (cf, cg) = closed_form_global(&d).unwrap();
        assert_relative_eq!(cf, 1.0 / PI, max_relative = 1e-14);
        let oracle = domain_oracle(&d, GlobalConstant::RobinTrace, 24).unwrap();
        assert!(cg >= oracle);
        let tri = DomainSpec::polygon(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![Dirichlet, Robin, Robin]);
        assert!(matches!(closed_form_global(&tri), Err(Error::UnsupportedShape(_))));
    }
}
