//! Sparse assembly helpers, compensated summation and SPD solvers.

use nalgebra::DVector;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// Kahan–Babuška compensated accumulator. Summation order is the call order,
/// so results are reproducible whenever the caller iterates deterministically.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated sum of a sequence.
pub fn ksum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// Coordinate-format accumulator; duplicates are summed on conversion.
#[derive(Debug, Clone)]
pub struct Triplets {
    coo: CooMatrix<f64>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { coo: CooMatrix::new(nrows, ncols) }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.coo.push(i, j, v);
        }
    }

    pub fn to_csr(&self) -> CsrMatrix<f64> {
        CsrMatrix::from(&self.coo)
    }
}

/// y = A x for a CSR matrix.
pub fn spmv(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    for (i, row) in a.row_iter().enumerate() {
        let mut s = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            s += v * x[j];
        }
        y[i] = s;
    }
    y
}

/// x^T A x.
pub fn quad_form(a: &CsrMatrix<f64>, x: &DVector<f64>) -> f64 {
    let ax = spmv(a, x);
    ksum(ax.iter().zip(x.iter()).map(|(p, q)| p * q))
}

/// Sum of two CSR matrices with the scaling `alpha * a + beta * b`.
pub fn add_scaled(a: &CsrMatrix<f64>, alpha: f64, b: &CsrMatrix<f64>, beta: f64) -> CsrMatrix<f64> {
    let mut t = Triplets::new(a.nrows(), a.ncols());
    for (i, row) in a.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            t.push(i, j, alpha * v);
        }
    }
    for (i, row) in b.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            t.push(i, j, beta * v);
        }
    }
    t.to_csr()
}

/// Submatrix on the rows and columns with `index[i] = Some(new index)`.
pub fn restrict(a: &CsrMatrix<f64>, index: &[Option<usize>], n: usize) -> CsrMatrix<f64> {
    let mut t = Triplets::new(n, n);
    for (i, row) in a.row_iter().enumerate() {
        if let Some(ri) = index[i] {
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                if let Some(rj) = index[j] {
                    t.push(ri, rj, v);
                }
            }
        }
    }
    t.to_csr()
}

fn diagonal(a: &CsrMatrix<f64>) -> DVector<f64> {
    let mut d = DVector::zeros(a.nrows());
    for (i, row) in a.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            if i == j {
                d[i] += v;
            }
        }
    }
    d
}

fn bandwidth(a: &CsrMatrix<f64>) -> usize {
    let mut bw = 0;
    for (i, row) in a.row_iter().enumerate() {
        for &j in row.col_indices() {
            bw = bw.max(i.abs_diff(j));
        }
    }
    bw
}

/// Outcome of a conjugate-gradient run.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive
/// (semi-)definite systems. `project`, when given, is applied to every search
/// direction and to the iterate, which keeps iterations inside a subspace
/// (used for consistent singular systems).
pub fn pcg(
    a: &CsrMatrix<f64>,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    tol: f64,
    max_iter: usize,
    project: Option<&dyn Fn(&mut DVector<f64>)>,
) -> Result<CgOutcome> {
    let n = b.len();
    let diag = diagonal(a);
    let inv: DVector<f64> = diag.map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 });
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    if let Some(p) = project {
        p(&mut x);
    }
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: DVector::zeros(n), iterations: 0, relative_residual: 0.0 });
    }
    let mut r = b - spmv(a, &x);
    let mut z = r.component_mul(&inv);
    if let Some(p) = project {
        p(&mut z);
    }
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    let mut res = r.norm() / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(CgOutcome { x, iterations: it, relative_residual: res });
        }
        let ad = spmv(a, &d);
        let dad = d.dot(&ad);
        if dad <= 0.0 {
            break;
        }
        let step = rz / dad;
        x.axpy(step, &d, 1.0);
        r.axpy(-step, &ad, 1.0);
        z = r.component_mul(&inv);
        if let Some(p) = project {
            p(&mut z);
        }
        let rz_new = r.dot(&z);
        d = &z + (rz_new / rz) * &d;
        rz = rz_new;
        res = r.norm() / bnorm;
    }
    if res <= tol {
        return Ok(CgOutcome { x, iterations: max_iter, relative_residual: res });
    }
    Err(Error::Solver(format!(
        "conjugate gradients stalled at relative residual {res:.3e} (n = {n})"
    )))
}

/// Largest `n * bandwidth` for which a banded Cholesky factor is attempted.
pub const CHOLESKY_FILL_LIMIT: usize = 40_000_000;

/// Reusable solver for a fixed symmetric positive definite matrix: sparse
/// Cholesky when the factor stays small, Jacobi-PCG otherwise.
pub enum SpdSolver {
    Cholesky(Box<CscCholesky<f64>>),
    Iterative { matrix: CsrMatrix<f64>, tol: f64 },
}

impl std::fmt::Debug for SpdSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpdSolver::Cholesky(_) => write!(f, "SpdSolver::Cholesky"),
            SpdSolver::Iterative { matrix, .. } => {
                write!(f, "SpdSolver::Iterative(n = {})", matrix.nrows())
            }
        }
    }
}

impl SpdSolver {
    pub fn new(a: &CsrMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Ok(SpdSolver::Iterative { matrix: a.clone(), tol: 1e-14 });
        }
        if n.saturating_mul(bandwidth(a) + 1) <= CHOLESKY_FILL_LIMIT {
            let csc = CscMatrix::from(a);
            let chol = CscCholesky::factor(&csc)
                .map_err(|_| Error::Solver("matrix is not positive definite".into()))?;
            Ok(SpdSolver::Cholesky(Box::new(chol)))
        } else {
            Ok(SpdSolver::Iterative { matrix: a.clone(), tol: 1e-13 })
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            SpdSolver::Cholesky(chol) => {
                if b.is_empty() {
                    return Ok(b.clone());
                }
                let x = chol.solve(b);
                Ok(DVector::from_column_slice(x.as_slice()))
            }
            SpdSolver::Iterative { matrix, tol } => {
                if b.is_empty() {
                    return Ok(b.clone());
                }
                let max_iter = 20 * matrix.nrows() + 100;
                Ok(pcg(matrix, b, None, *tol, max_iter, None)?.x)
            }
        }
    }
}

/// Solves a small dense symmetric positive definite system, falling back to
/// LU when Cholesky fails on round-off.
pub fn dense_spd_solve(
    a: nalgebra::DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.lu().solve(b)
}
