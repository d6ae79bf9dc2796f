//! Local bases and assembly on the cells of a partition.
//!
//! Scalars use the continuous nodal space (Q1 on tensor cells, P1 on
//! triangles). Fluxes use the lowest-order Raviart–Thomas space with one
//! degree of freedom per face: the normal component along the face's global
//! normal.

use nalgebra::{DVector, Matrix3};
use nalgebra_sparse::CsrMatrix;

use crate::linalg::Triplets;
use crate::mesh::{Partition, Point, Subdomain};

/// Values and gradients of the nodal basis functions of one cell.
#[derive(Debug, Clone, Copy)]
pub struct ScalarBasis {
    pub n: usize,
    pub values: [f64; 8],
    pub grads: [Point; 8],
}

/// Values and divergences of the flux basis functions of one cell, one per
/// local face, scaled to a unit global degree of freedom.
#[derive(Debug, Clone, Copy)]
pub struct FluxBasis {
    pub n: usize,
    pub values: [Point; 6],
    pub divs: [f64; 6],
}

pub fn scalar_basis(cell: &Subdomain, x: &Point) -> ScalarBasis {
    let mut b = ScalarBasis { n: cell.nodes.len(), values: [0.0; 8], grads: [Point::zeros(); 8] };
    if cell.is_triangle() {
        let l = cell.barycentric(x);
        let g = cell.barycentric_gradients();
        b.values[..3].copy_from_slice(&l[..3]);
        b.grads[..3].copy_from_slice(&g[..3]);
        return b;
    }
    let d = cell.shape.dim();
    let (lo, hi) = cell.bounds();
    let mut s = [0.0; 3];
    let mut h = [1.0; 3];
    for k in 0..d {
        h[k] = hi[k] - lo[k];
        s[k] = (x[k] - lo[k]) / h[k];
    }
    for bits in 0..(1usize << d) {
        let f = |k: usize| if bits >> k & 1 == 1 { s[k] } else { 1.0 - s[k] };
        let df = |k: usize| if bits >> k & 1 == 1 { 1.0 / h[k] } else { -1.0 / h[k] };
        let mut v = 1.0;
        for k in 0..d {
            v *= f(k);
        }
        let mut g = Point::zeros();
        for k in 0..d {
            let mut p = df(k);
            for j in 0..d {
                if j != k {
                    p *= f(j);
                }
            }
            g[k] = p;
        }
        b.values[bits] = v;
        b.grads[bits] = g;
    }
    b
}

pub fn flux_basis(cell: &Subdomain, x: &Point) -> FluxBasis {
    let mut b = FluxBasis { n: cell.faces.len(), values: [Point::zeros(); 6], divs: [0.0; 6] };
    if cell.is_triangle() {
        let area = cell.measure;
        for i in 0..3 {
            let p = cell.vertices[i];
            let a = cell.vertices[(i + 1) % 3];
            let c = cell.vertices[(i + 2) % 3];
            let height = 2.0 * area / (c - a).norm();
            let s = cell.face_signs[i];
            b.values[i] = (x - p) * (s / height);
            b.divs[i] = s * 2.0 / height;
        }
        return b;
    }
    let d = cell.shape.dim();
    let (lo, hi) = cell.bounds();
    for k in 0..d {
        let h = hi[k] - lo[k];
        let s = (x[k] - lo[k]) / h;
        let mut e = Point::zeros();
        e[k] = 1.0;
        b.values[2 * k] = e * (1.0 - s);
        b.values[2 * k + 1] = e * s;
        b.divs[2 * k] = -1.0 / h;
        b.divs[2 * k + 1] = 1.0 / h;
    }
    b
}

/// Inverse of the `dim`-block of a coefficient matrix padded with the
/// identity.
pub fn inverse_block(a: &Matrix3<f64>, dim: usize) -> Matrix3<f64> {
    let mut m = Matrix3::identity();
    for i in 0..dim {
        for j in 0..dim {
            m[(i, j)] = a[(i, j)];
        }
    }
    m.try_inverse().expect("coefficient matrix is invertible")
}

/// Cell quadrature order adequate for products of two basis functions
/// against a smooth weight.
pub const DEFAULT_ORDER: usize = 4;

/// ∫ A∇φ_j·∇φ_i.
pub fn stiffness(part: &Partition, a: &dyn Fn(&Point) -> Matrix3<f64>, order: usize) -> CsrMatrix<f64> {
    let n = part.n_nodes();
    let mut t = Triplets::new(n, n);
    for cell in &part.subdomains {
        let m = cell.nodes.len();
        let mut local = [[0.0; 8]; 8];
        for (x, w) in cell.quadrature(order) {
            let b = scalar_basis(cell, &x);
            let ax = a(&x);
            for i in 0..m {
                let ag = ax * b.grads[i];
                for j in 0..m {
                    local[i][j] += w * ag.dot(&b.grads[j]);
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                t.push(cell.nodes[i], cell.nodes[j], local[i][j]);
            }
        }
    }
    t.to_csr()
}

/// ∫ c φ_j φ_i.
pub fn mass(part: &Partition, c: &dyn Fn(&Point) -> f64, order: usize) -> CsrMatrix<f64> {
    let n = part.n_nodes();
    let mut t = Triplets::new(n, n);
    for cell in &part.subdomains {
        let m = cell.nodes.len();
        let mut local = [[0.0; 8]; 8];
        for (x, w) in cell.quadrature(order) {
            let b = scalar_basis(cell, &x);
            let cx = c(&x) * w;
            for i in 0..m {
                for j in 0..m {
                    local[i][j] += cx * b.values[i] * b.values[j];
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                t.push(cell.nodes[i], cell.nodes[j], local[i][j]);
            }
        }
    }
    t.to_csr()
}

/// ∫_faces c φ_j φ_i over the given boundary faces.
pub fn boundary_mass(part: &Partition, faces: &[usize], c: &dyn Fn(&Point) -> f64, order: usize) -> CsrMatrix<f64> {
    let n = part.n_nodes();
    let mut t = Triplets::new(n, n);
    for &f in faces {
        let face = &part.faces[f];
        let cell = &part.subdomains[face.cells[0]];
        let m = cell.nodes.len();
        for (x, w) in face.quadrature(&part.nodes, order) {
            let b = scalar_basis(cell, &x);
            let cx = c(&x) * w;
            for i in 0..m {
                for j in 0..m {
                    t.push(cell.nodes[i], cell.nodes[j], cx * b.values[i] * b.values[j]);
                }
            }
        }
    }
    t.to_csr()
}

/// ∫ g φ_i.
pub fn load(part: &Partition, g: &dyn Fn(&Point) -> f64, order: usize) -> DVector<f64> {
    let mut b = DVector::zeros(part.n_nodes());
    for cell in &part.subdomains {
        for (x, w) in cell.quadrature(order) {
            let basis = scalar_basis(cell, &x);
            let gx = g(&x) * w;
            for i in 0..basis.n {
                b[cell.nodes[i]] += gx * basis.values[i];
            }
        }
    }
    b
}

/// ∫_faces g φ_i over the given boundary faces.
pub fn boundary_load(part: &Partition, faces: &[usize], g: &dyn Fn(&Point) -> f64, order: usize) -> DVector<f64> {
    let mut b = DVector::zeros(part.n_nodes());
    for &f in faces {
        let face = &part.faces[f];
        let cell = &part.subdomains[face.cells[0]];
        for (x, w) in face.quadrature(&part.nodes, order) {
            let basis = scalar_basis(cell, &x);
            let gx = g(&x) * w;
            for i in 0..basis.n {
                b[cell.nodes[i]] += gx * basis.values[i];
            }
        }
    }
    b
}

/// ∫ A⁻¹ψ_j·ψ_i over the flux space.
pub fn flux_mass(part: &Partition, a: &dyn Fn(&Point) -> Matrix3<f64>, order: usize) -> CsrMatrix<f64> {
    let n = part.n_faces();
    let mut t = Triplets::new(n, n);
    for cell in &part.subdomains {
        let m = cell.faces.len();
        let mut local = [[0.0; 6]; 6];
        for (x, w) in cell.quadrature(order) {
            let b = flux_basis(cell, &x);
            let ainv = inverse_block(&a(&x), part.dim);
            for i in 0..m {
                let ai = ainv * b.values[i];
                for j in 0..m {
                    local[i][j] += w * ai.dot(&b.values[j]);
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                t.push(cell.faces[i], cell.faces[j], local[i][j]);
            }
        }
    }
    t.to_csr()
}
