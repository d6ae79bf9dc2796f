//! Spatial domain, its decomposition into convex subdomains, the
//! Dirichlet/Robin boundary split and the reaction-strength classification.
//!
//! Subdomains double as the cells of the finite element spaces: axis-aligned
//! rectangles/boxes for box domains, triangles for convex polygons.

use std::collections::HashMap;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_tensor, gauss_unit, triangle_rule};

pub type Point = Vector3<f64>;

/// Relative tolerance for geometric coincidence tests.
const GEOM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Dirichlet,
    Robin,
}

/// Overrides the boundary kind on the part of a side where coordinate
/// `coord` lies in `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub coord: usize,
    pub lo: f64,
    pub hi: f64,
    pub kind: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideSpec {
    pub kind: BoundaryKind,
    #[serde(default)]
    pub patches: Vec<Patch>,
}

impl SideSpec {
    pub fn uniform(kind: BoundaryKind) -> Self {
        Self { kind, patches: Vec::new() }
    }

    fn has_robin(&self) -> bool {
        self.kind == BoundaryKind::Robin || self.patches.iter().any(|p| p.kind == BoundaryKind::Robin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geometry {
    /// Axis-aligned box in 2 or 3 dimensions.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Convex polygon with counter-clockwise vertices.
    Polygon { vertices: Vec<[f64; 2]> },
}

/// Domain geometry plus the boundary split.
///
/// Sides of a box are ordered `x1 = lower, x1 = upper, x2 = lower, ...`;
/// side `k` of a polygon runs from vertex `k` to vertex `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub geometry: Geometry,
    pub sides: Vec<SideSpec>,
}

impl DomainSpec {
    pub fn rectangle(lower: [f64; 2], upper: [f64; 2], sides: [BoundaryKind; 4]) -> Self {
        Self {
            geometry: Geometry::Box { lower: lower.to_vec(), upper: upper.to_vec() },
            sides: sides.iter().map(|&k| SideSpec::uniform(k)).collect(),
        }
    }

    pub fn cuboid(lower: [f64; 3], upper: [f64; 3], sides: [BoundaryKind; 6]) -> Self {
        Self {
            geometry: Geometry::Box { lower: lower.to_vec(), upper: upper.to_vec() },
            sides: sides.iter().map(|&k| SideSpec::uniform(k)).collect(),
        }
    }

    pub fn polygon(vertices: Vec<[f64; 2]>, sides: Vec<BoundaryKind>) -> Self {
        Self {
            geometry: Geometry::Polygon { vertices },
            sides: sides.into_iter().map(SideSpec::uniform).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.geometry {
            Geometry::Box { lower, .. } => lower.len(),
            Geometry::Polygon { .. } => 2,
        }
    }

    pub fn side_count(&self) -> usize {
        match &self.geometry {
            Geometry::Box { lower, .. } => 2 * lower.len(),
            Geometry::Polygon { vertices } => vertices.len(),
        }
    }

    /// Diameter of the domain (longest vertex-to-vertex distance).
    pub fn diameter(&self) -> f64 {
        match &self.geometry {
            Geometry::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt()
            }
            Geometry::Polygon { vertices } => {
                let mut d: f64 = 0.0;
                for a in vertices {
                    for b in vertices {
                        d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
                    }
                }
                d
            }
        }
    }

    pub fn measure(&self) -> f64 {
        match &self.geometry {
            Geometry::Box { lower, upper } => lower.iter().zip(upper).map(|(a, b)| b - a).product(),
            Geometry::Polygon { vertices } => signed_area(vertices),
        }
    }

    pub fn has_dirichlet(&self) -> bool {
        self.sides.iter().any(|s| {
            s.kind == BoundaryKind::Dirichlet || s.patches.iter().any(|p| p.kind == BoundaryKind::Dirichlet)
        })
    }

    /// Checks dimension, extents, convexity and that a Robin part exists.
    pub fn validate(&self) -> Result<()> {
        match &self.geometry {
            Geometry::Box { lower, upper } => {
                if !(2..=3).contains(&lower.len()) || lower.len() != upper.len() {
                    return Err(Error::InvalidParameter(format!(
                        "box domains need 2 or 3 coordinates per corner, got {} and {}",
                        lower.len(),
                        upper.len()
                    )));
                }
                if lower.iter().zip(upper).any(|(a, b)| !(b > a)) {
                    return Err(Error::InvalidParameter("box upper corner must exceed lower corner".into()));
                }
            }
            Geometry::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::InvalidParameter("polygon needs at least 3 vertices".into()));
                }
                let n = vertices.len();
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let c = vertices[(i + 2) % n];
                    let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
                    if cross <= 0.0 {
                        return Err(Error::Geometry(
                            "polygon must be convex with counter-clockwise vertices".into(),
                        ));
                    }
                }
            }
        }
        if self.sides.len() != self.side_count() {
            return Err(Error::InvalidParameter(format!(
                "domain has {} sides but {} side specifications were given",
                self.side_count(),
                self.sides.len()
            )));
        }
        for s in &self.sides {
            for p in &s.patches {
                if p.coord >= self.dim() || !(p.hi >= p.lo) {
                    return Err(Error::InvalidParameter(format!("malformed boundary patch {p:?}")));
                }
            }
        }
        if !self.sides.iter().any(SideSpec::has_robin) {
            return Err(Error::InvalidParameter("the Robin part of the boundary must be non-empty".into()));
        }
        Ok(())
    }
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
}

/// Shape of a single convex subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Interval { h: f64 },
    Rectangle { h1: f64, h2: f64 },
    Box { h1: f64, h2: f64, h3: f64 },
    Triangle { vertices: [[f64; 2]; 3] },
}

impl Shape {
    pub fn dim(&self) -> usize {
        match self {
            Shape::Interval { .. } => 1,
            Shape::Rectangle { .. } | Shape::Triangle { .. } => 2,
            Shape::Box { .. } => 3,
        }
    }

    /// Vertices in the local ordering used by the cells (tensor shapes start
    /// at the origin).
    pub fn vertices(&self) -> Vec<Point> {
        match *self {
            Shape::Interval { h } => vec![Point::zeros(), Point::new(h, 0.0, 0.0)],
            Shape::Rectangle { h1, h2 } => tensor_vertices(&[h1, h2]),
            Shape::Box { h1, h2, h3 } => tensor_vertices(&[h1, h2, h3]),
            Shape::Triangle { vertices } => vertices.iter().map(|v| Point::new(v[0], v[1], 0.0)).collect(),
        }
    }

    pub fn diameter(&self) -> f64 {
        let v = self.vertices();
        let mut d: f64 = 0.0;
        for a in &v {
            for b in &v {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    pub fn measure(&self) -> f64 {
        match *self {
            Shape::Interval { h } => h,
            Shape::Rectangle { h1, h2 } => h1 * h2,
            Shape::Box { h1, h2, h3 } => h1 * h2 * h3,
            Shape::Triangle { vertices } => signed_area(&vertices).abs(),
        }
    }

    /// The shape as a stand-alone domain with every side of the given kind.
    pub fn as_domain(&self, kind: BoundaryKind) -> Result<DomainSpec> {
        match *self {
            Shape::Interval { .. } => Err(Error::UnsupportedShape(
                "intervals are handled by the one-dimensional oracle only".into(),
            )),
            Shape::Rectangle { h1, h2 } => Ok(DomainSpec::rectangle([0.0, 0.0], [h1, h2], [kind; 4])),
            Shape::Box { h1, h2, h3 } => Ok(DomainSpec::cuboid([0.0; 3], [h1, h2, h3], [kind; 6])),
            Shape::Triangle { mut vertices } => {
                if signed_area(&vertices) < 0.0 {
                    vertices.swap(1, 2);
                }
                Ok(DomainSpec::polygon(vertices.to_vec(), vec![kind; 3]))
            }
        }
    }
}

fn tensor_vertices(h: &[f64]) -> Vec<Point> {
    let d = h.len();
    (0..(1usize << d))
        .map(|bits| {
            let mut p = Point::zeros();
            for k in 0..d {
                if bits >> k & 1 == 1 {
                    p[k] = h[k];
                }
            }
            p
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceKind {
    Interior,
    Dirichlet,
    Robin,
}

/// A face of the partition. `normal` fixes the global orientation used by
/// flux degrees of freedom: `+e_axis` for tensor faces, the rotated edge
/// direction (lower to higher node id) for triangle edges.
#[derive(Debug, Clone, Serialize)]
pub struct Face {
    pub id: usize,
    pub nodes: Vec<usize>,
    pub cells: Vec<usize>,
    pub normal: Point,
    pub measure: f64,
    pub centroid: Point,
    pub kind: FaceKind,
    pub side: Option<usize>,
    /// Normal axis for faces of tensor cells.
    pub axis: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshKind {
    Tensor,
    Simplicial,
}

/// One convex subdomain (a cell of the discrete spaces).
///
/// Tensor cells number their `2^d` vertices by bit pattern (bit `k` set means
/// the upper end in axis `k`) and their faces as `2k` (lower) and `2k + 1`
/// (upper) for axis `k`. Triangles number face `i` opposite vertex `i`.
#[derive(Debug, Clone, Serialize)]
pub struct Subdomain {
    pub id: usize,
    pub shape: Shape,
    pub vertices: Vec<Point>,
    pub nodes: Vec<usize>,
    pub faces: Vec<usize>,
    /// Outward normal of each local face relative to the global face normal.
    pub face_signs: Vec<f64>,
    pub diameter: f64,
    pub measure: f64,
}

impl Subdomain {
    pub fn is_triangle(&self) -> bool {
        matches!(self.shape, Shape::Triangle { .. })
    }

    /// Lower and upper corners (tensor cells).
    pub fn bounds(&self) -> (Point, Point) {
        (self.vertices[0], self.vertices[self.vertices.len() - 1])
    }

    /// Barycentric coordinates of `x` (triangles).
    pub fn barycentric(&self, x: &Point) -> [f64; 3] {
        let (a, b, c) = (self.vertices[0], self.vertices[1], self.vertices[2]);
        let m = Matrix2::new(b.x - a.x, c.x - a.x, b.y - a.y, c.y - a.y);
        let inv = m.try_inverse().expect("non-degenerate triangle");
        let l = inv * Vector2::new(x.x - a.x, x.y - a.y);
        [1.0 - l[0] - l[1], l[0], l[1]]
    }

    /// Gradients of the barycentric coordinates (triangles).
    pub fn barycentric_gradients(&self) -> [Point; 3] {
        let (a, b, c) = (self.vertices[0], self.vertices[1], self.vertices[2]);
        let m = Matrix2::new(b.x - a.x, c.x - a.x, b.y - a.y, c.y - a.y);
        let inv = m.try_inverse().expect("non-degenerate triangle");
        // rows of inv are the gradients of l1 and l2
        let g1 = Point::new(inv[(0, 0)], inv[(0, 1)], 0.0);
        let g2 = Point::new(inv[(1, 0)], inv[(1, 1)], 0.0);
        [-g1 - g2, g1, g2]
    }

    /// Quadrature points and weights (weights sum to the measure).
    pub fn quadrature(&self, order: usize) -> Vec<(Point, f64)> {
        if self.is_triangle() {
            let (a, b, c) = (self.vertices[0], self.vertices[1], self.vertices[2]);
            let jac = 2.0 * self.measure;
            triangle_rule(order)
                .into_iter()
                .map(|(p, w)| (a + (b - a) * p[0] + (c - a) * p[1], w * jac))
                .collect()
        } else {
            let (lo, hi) = self.bounds();
            let d = self.shape.dim();
            gauss_tensor(d, order)
                .into_iter()
                .map(|(p, w)| {
                    let mut x = lo;
                    for k in 0..d {
                        x[k] = lo[k] + p[k] * (hi[k] - lo[k]);
                    }
                    (x, w * self.measure)
                })
                .collect()
        }
    }

    /// True if `x` lies in the closed cell (up to a relative tolerance).
    pub fn contains(&self, x: &Point) -> bool {
        let tol = GEOM_TOL * self.diameter.max(1.0);
        if self.is_triangle() {
            self.barycentric(x).iter().all(|&l| l >= -GEOM_TOL)
        } else {
            let (lo, hi) = self.bounds();
            (0..self.shape.dim()).all(|k| x[k] >= lo[k] - tol && x[k] <= hi[k] + tol)
        }
    }
}

impl Face {
    /// Quadrature points and weights on the face (weights sum to the measure).
    pub fn quadrature(&self, nodes: &[Point], order: usize) -> Vec<(Point, f64)> {
        let pts: Vec<Point> = self.nodes.iter().map(|&n| nodes[n]).collect();
        match pts.len() {
            1 => vec![(pts[0], 1.0)],
            2 => gauss_unit(order)
                .into_iter()
                .map(|(s, w)| (pts[0] + (pts[1] - pts[0]) * s, w * self.measure))
                .collect(),
            4 => {
                // tensor face: nodes ordered by bit pattern over the two tangential axes
                let (o, e1, e2) = (pts[0], pts[1] - pts[0], pts[2] - pts[0]);
                gauss_tensor(2, order)
                    .into_iter()
                    .map(|(p, w)| (o + e1 * p[0] + e2 * p[1], w * self.measure))
                    .collect()
            }
            n => unreachable!("faces have 1, 2 or 4 nodes, got {n}"),
        }
    }

    /// Length of the face's extent in coordinate `coord`.
    fn extent(&self, nodes: &[Point], coord: usize) -> (f64, f64) {
        let vals = self.nodes.iter().map(|&n| nodes[n][coord]);
        let lo = vals.clone().fold(f64::INFINITY, f64::min);
        let hi = vals.fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Reaction-strength classes of the subdomains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    /// Threshold P separating the classes.
    pub threshold: f64,
    /// Subdomains where the reaction coefficient is at least P.
    pub strong: Vec<usize>,
    /// The remaining subdomains.
    pub weak: Vec<usize>,
    /// Minimum of the reaction coefficient over each subdomain's sample points.
    pub reaction_min: Vec<f64>,
}

/// Decomposition of the domain into convex subdomains with face bookkeeping.
#[derive(Debug, Clone, Serialize)]
pub struct Partition {
    pub dim: usize,
    pub kind: MeshKind,
    pub nodes: Vec<Point>,
    pub subdomains: Vec<Subdomain>,
    pub faces: Vec<Face>,
    pub interfaces: Vec<usize>,
    pub robin_faces: Vec<usize>,
    pub dirichlet_faces: Vec<usize>,
    /// Nodes lying on the Dirichlet part (fixed to zero in V0).
    pub dirichlet_nodes: Vec<bool>,
    pub domain_measure: f64,
    pub classification: Option<Classification>,
}

/// A Robin face together with the subdomain it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RobinFace {
    pub subdomain: usize,
    pub face: usize,
}

impl Partition {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_cells(&self) -> usize {
        self.subdomains.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// (i, j, face) for every interior face.
    pub fn interface_triples(&self) -> Vec<(usize, usize, usize)> {
        self.interfaces
            .iter()
            .map(|&f| (self.faces[f].cells[0], self.faces[f].cells[1], f))
            .collect()
    }

    pub fn dirichlet_pairs(&self) -> Vec<(usize, usize)> {
        self.dirichlet_faces.iter().map(|&f| (self.faces[f].cells[0], f)).collect()
    }

    /// Outward unit normal of a boundary face.
    pub fn outward_normal(&self, face: usize) -> Point {
        let f = &self.faces[face];
        let cell = &self.subdomains[f.cells[0]];
        let local = cell.faces.iter().position(|&g| g == face).expect("face belongs to its cell");
        f.normal * cell.face_signs[local]
    }

    /// Local index of a global face inside a cell.
    pub fn local_face(&self, cell: usize, face: usize) -> usize {
        self.subdomains[cell]
            .faces
            .iter()
            .position(|&g| g == face)
            .expect("face belongs to the cell")
    }

    /// Number of Robin faces attached to each subdomain.
    pub fn robin_multiplicity(&self) -> Vec<usize> {
        let mut m = vec![0; self.n_cells()];
        for &f in &self.robin_faces {
            m[self.faces[f].cells[0]] += 1;
        }
        m
    }

    pub fn classification(&self) -> Result<&Classification> {
        self.classification
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("partition has not been classified".into()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("partition serializes")
    }
}

/// Builds the partition of `domain` with `resolution` cells per axis (box
/// domains) or refinement level `resolution[0]` of the fan triangulation
/// (polygons). A single entry is broadcast to every axis.
pub fn build_partition(domain: &DomainSpec, resolution: &[usize]) -> Result<Partition> {
    domain.validate()?;
    if resolution.is_empty() || resolution.contains(&0) {
        return Err(Error::InvalidParameter("resolution must be at least 1 per axis".into()));
    }
    let mut part = match &domain.geometry {
        Geometry::Box { lower, upper } => {
            let d = lower.len();
            let res: Vec<usize> = if resolution.len() == 1 {
                vec![resolution[0]; d]
            } else if resolution.len() == d {
                resolution.to_vec()
            } else {
                return Err(Error::InvalidParameter(format!(
                    "resolution has {} entries for a {d}-dimensional box",
                    resolution.len()
                )));
            };
            build_tensor(lower, upper, &res)
        }
        Geometry::Polygon { vertices } => build_simplicial(vertices, resolution[0])?,
    };
    part.domain_measure = domain.measure();
    assign_boundary(&mut part, domain)?;
    Ok(part)
}

fn build_tensor(lower: &[f64], upper: &[f64], res: &[usize]) -> Partition {
    let d = lower.len();
    let np: Vec<usize> = res.iter().map(|r| r + 1).collect();
    let coord = |axis: usize, i: usize| {
        if i == res[axis] {
            upper[axis]
        } else {
            lower[axis] + (upper[axis] - lower[axis]) * i as f64 / res[axis] as f64
        }
    };
    let node_index = |m: &[usize]| -> usize {
        let mut idx = 0;
        for k in (0..d).rev() {
            idx = idx * np[k] + m[k];
        }
        idx
    };
    let n_nodes: usize = np.iter().product();
    let mut nodes = Vec::with_capacity(n_nodes);
    for idx in 0..n_nodes {
        let mut rem = idx;
        let mut p = Point::zeros();
        for k in 0..d {
            p[k] = coord(k, rem % np[k]);
            rem /= np[k];
        }
        nodes.push(p);
    }

    let multi = |mut idx: usize, dims: &[usize]| -> Vec<usize> {
        let mut m = vec![0; dims.len()];
        for k in 0..dims.len() {
            m[k] = idx % dims[k];
            idx /= dims[k];
        }
        m
    };

    // faces perpendicular to each axis
    let mut faces = Vec::new();
    let mut face_lookup: Vec<HashMap<Vec<usize>, usize>> = vec![HashMap::new(); d];
    let n_cells: usize = res.iter().product();
    for axis in 0..d {
        let dims: Vec<usize> = (0..d).map(|k| if k == axis { res[k] + 1 } else { res[k] }).collect();
        let count: usize = dims.iter().product();
        for idx in 0..count {
            let m = multi(idx, &dims);
            let tang: Vec<usize> = (0..d).filter(|&k| k != axis).collect();
            let mut fnodes = Vec::new();
            for bits in 0..(1usize << tang.len()) {
                let mut mm = m.clone();
                for (b, &k) in tang.iter().enumerate() {
                    mm[k] += bits >> b & 1;
                }
                fnodes.push(node_index(&mm));
            }
            let mut cells = Vec::new();
            if m[axis] > 0 {
                let mut mc = m.clone();
                mc[axis] -= 1;
                cells.push(cell_index(&mc, res));
            }
            if m[axis] < res[axis] {
                cells.push(cell_index(&m, res));
            }
            let measure: f64 = tang
                .iter()
                .map(|&k| (upper[k] - lower[k]) / res[k] as f64)
                .product();
            let centroid = fnodes.iter().map(|&n| nodes[n]).sum::<Point>() / fnodes.len() as f64;
            let mut normal = Point::zeros();
            normal[axis] = 1.0;
            let id = faces.len();
            face_lookup[axis].insert(m.clone(), id);
            faces.push(Face {
                id,
                nodes: fnodes,
                cells,
                normal,
                measure,
                centroid,
                kind: FaceKind::Interior,
                side: None,
                axis: Some(axis),
            });
        }
    }

    let mut subdomains = Vec::with_capacity(n_cells);
    for c in 0..n_cells {
        let m = multi(c, res);
        let mut cnodes = Vec::with_capacity(1 << d);
        for bits in 0..(1usize << d) {
            let mm: Vec<usize> = (0..d).map(|k| m[k] + (bits >> k & 1)).collect();
            cnodes.push(node_index(&mm));
        }
        let mut cfaces = Vec::with_capacity(2 * d);
        let mut signs = Vec::with_capacity(2 * d);
        for axis in 0..d {
            cfaces.push(face_lookup[axis][&m]);
            signs.push(-1.0);
            let mut mu = m.clone();
            mu[axis] += 1;
            cfaces.push(face_lookup[axis][&mu]);
            signs.push(1.0);
        }
        let h: Vec<f64> = (0..d).map(|k| nodes[cnodes[(1 << d) - 1]][k] - nodes[cnodes[0]][k]).collect();
        let shape = if d == 2 {
            Shape::Rectangle { h1: h[0], h2: h[1] }
        } else {
            Shape::Box { h1: h[0], h2: h[1], h3: h[2] }
        };
        let vertices: Vec<Point> = cnodes.iter().map(|&n| nodes[n]).collect();
        subdomains.push(Subdomain {
            id: c,
            diameter: shape.diameter(),
            measure: shape.measure(),
            shape,
            vertices,
            nodes: cnodes,
            faces: cfaces,
            face_signs: signs,
        });
    }

    Partition {
        dim: d,
        kind: MeshKind::Tensor,
        dirichlet_nodes: vec![false; nodes.len()],
        nodes,
        subdomains,
        faces,
        interfaces: Vec::new(),
        robin_faces: Vec::new(),
        dirichlet_faces: Vec::new(),
        domain_measure: 0.0,
        classification: None,
    }
}

fn cell_index(m: &[usize], res: &[usize]) -> usize {
    let mut idx = 0;
    for k in (0..m.len()).rev() {
        idx = idx * res[k] + m[k];
    }
    idx
}

fn build_simplicial(vertices: &[[f64; 2]], r: usize) -> Result<Partition> {
    let scale = vertices
        .iter()
        .flat_map(|v| v.iter().map(|c| c.abs()))
        .fold(1.0f64, f64::max);
    let quant = |p: &Point| -> (i64, i64) {
        let q = 1e-9 * scale;
        ((p.x / q).round() as i64, (p.y / q).round() as i64)
    };
    let mut nodes: Vec<Point> = Vec::new();
    let mut lookup: HashMap<(i64, i64), usize> = HashMap::new();
    let mut node_id = |p: Point, nodes: &mut Vec<Point>| -> usize {
        *lookup.entry(quant(&p)).or_insert_with(|| {
            nodes.push(p);
            nodes.len() - 1
        })
    };
    let v0 = Point::new(vertices[0][0], vertices[0][1], 0.0);
    let mut tris: Vec<[usize; 3]> = Vec::new();
    for i in 1..vertices.len() - 1 {
        let b = Point::new(vertices[i][0], vertices[i][1], 0.0);
        let c = Point::new(vertices[i + 1][0], vertices[i + 1][1], 0.0);
        let lattice = |a: usize, bb: usize| v0 + (b - v0) * (a as f64 / r as f64) + (c - v0) * (bb as f64 / r as f64);
        let mut ids = vec![vec![0usize; r + 1]; r + 1];
        for a in 0..=r {
            for bb in 0..=(r - a) {
                // exact corners avoid round-off drift in shared fan edges
                let p = if a == r { b } else if bb == r { c } else { lattice(a, bb) };
                ids[a][bb] = node_id(p, &mut nodes);
            }
        }
        for a in 0..r {
            for bb in 0..(r - a) {
                tris.push([ids[a][bb], ids[a + 1][bb], ids[a][bb + 1]]);
                if a + bb + 2 <= r {
                    tris.push([ids[a + 1][bb], ids[a + 1][bb + 1], ids[a][bb + 1]]);
                }
            }
        }
    }

    let mut faces: Vec<Face> = Vec::new();
    let mut edge_lookup: HashMap<(usize, usize), usize> = HashMap::new();
    let mut subdomains = Vec::with_capacity(tris.len());
    for (c, t) in tris.iter().enumerate() {
        let pts: Vec<Point> = t.iter().map(|&n| nodes[n]).collect();
        let area = 0.5 * ((pts[1] - pts[0]).x * (pts[2] - pts[0]).y - (pts[1] - pts[0]).y * (pts[2] - pts[0]).x);
        if area <= 0.0 {
            return Err(Error::Geometry(format!("triangle {c} is degenerate or inverted")));
        }
        let mut cfaces = Vec::with_capacity(3);
        let mut signs = Vec::with_capacity(3);
        for i in 0..3 {
            let (p, q) = (t[(i + 1) % 3], t[(i + 2) % 3]);
            let key = (p.min(q), p.max(q));
            let id = *edge_lookup.entry(key).or_insert_with(|| {
                let (a, b) = (nodes[key.0], nodes[key.1]);
                let tan = b - a;
                let len = tan.norm();
                let id = faces.len();
                faces.push(Face {
                    id,
                    nodes: vec![key.0, key.1],
                    cells: Vec::new(),
                    normal: Point::new(tan.y, -tan.x, 0.0) / len,
                    measure: len,
                    centroid: (a + b) * 0.5,
                    kind: FaceKind::Interior,
                    side: None,
                    axis: None,
                });
                id
            });
            faces[id].cells.push(c);
            cfaces.push(id);
            // counter-clockwise edge p -> q has outward normal rot(q - p)
            signs.push(if p < q { 1.0 } else { -1.0 });
        }
        let tv = [[pts[0].x, pts[0].y], [pts[1].x, pts[1].y], [pts[2].x, pts[2].y]];
        let shape = Shape::Triangle { vertices: tv };
        subdomains.push(Subdomain {
            id: c,
            diameter: shape.diameter(),
            measure: area,
            shape,
            vertices: pts,
            nodes: t.to_vec(),
            faces: cfaces,
            face_signs: signs,
        });
    }
    Ok(Partition {
        dim: 2,
        kind: MeshKind::Simplicial,
        dirichlet_nodes: vec![false; nodes.len()],
        nodes,
        subdomains,
        faces,
        interfaces: Vec::new(),
        robin_faces: Vec::new(),
        dirichlet_faces: Vec::new(),
        domain_measure: 0.0,
        classification: None,
    })
}

/// Which side of the domain a boundary face lies on.
fn locate_side(domain: &DomainSpec, part: &Partition, face: &Face) -> Option<usize> {
    match &domain.geometry {
        Geometry::Box { lower, upper } => {
            let axis = face.axis?;
            let x = face.centroid[axis];
            let tol = GEOM_TOL * (upper[axis] - lower[axis]).abs().max(1.0);
            if (x - lower[axis]).abs() <= tol {
                Some(2 * axis)
            } else if (x - upper[axis]).abs() <= tol {
                Some(2 * axis + 1)
            } else {
                None
            }
        }
        Geometry::Polygon { vertices } => {
            let n = vertices.len();
            let diam = domain.diameter();
            (0..n).find(|&s| {
                let a = Vector2::new(vertices[s][0], vertices[s][1]);
                let b = Vector2::new(vertices[(s + 1) % n][0], vertices[(s + 1) % n][1]);
                let t = (b - a).normalize();
                face.nodes.iter().all(|&k| {
                    let p = Vector2::new(part.nodes[k].x, part.nodes[k].y) - a;
                    (p.x * t.y - p.y * t.x).abs() <= GEOM_TOL * diam.max(1.0)
                })
            })
        }
    }
}

/// Assigns Dirichlet/Robin kinds to boundary faces, failing when a face
/// straddles a change of boundary kind.
fn assign_boundary(part: &mut Partition, domain: &DomainSpec) -> Result<()> {
    let scale = domain.diameter().max(1.0);
    let tol = GEOM_TOL * scale;
    for fid in 0..part.faces.len() {
        if part.faces[fid].cells.len() == 2 {
            part.interfaces.push(fid);
            continue;
        }
        let side = locate_side(domain, part, &part.faces[fid]).ok_or_else(|| {
            Error::Geometry(format!("boundary face {fid} does not lie on any domain side"))
        })?;
        let spec = &domain.sides[side];
        let mut kind = spec.kind;
        for patch in &spec.patches {
            let (a, b) = part.faces[fid].extent(&part.nodes, patch.coord);
            let inside = a >= patch.lo - tol && b <= patch.hi + tol;
            if b - a <= tol {
                if inside {
                    kind = patch.kind;
                }
                continue;
            }
            let overlap = b.min(patch.hi) - a.max(patch.lo);
            if overlap > tol {
                if inside {
                    kind = patch.kind;
                } else if patch.kind != kind {
                    return Err(Error::Decomposition(format!(
                        "face {fid} on side {side} straddles the boundary split at coordinate {} in [{}, {}]",
                        patch.coord, patch.lo, patch.hi
                    )));
                }
            }
        }
        let face = &mut part.faces[fid];
        face.side = Some(side);
        match kind {
            BoundaryKind::Dirichlet => {
                face.kind = FaceKind::Dirichlet;
                part.dirichlet_faces.push(fid);
            }
            BoundaryKind::Robin => {
                face.kind = FaceKind::Robin;
                part.robin_faces.push(fid);
            }
        }
    }
    if part.robin_faces.is_empty() {
        return Err(Error::Decomposition("no face of the partition lies on the Robin part".into()));
    }
    for &f in &part.dirichlet_faces {
        for &n in &part.faces[f].nodes {
            part.dirichlet_nodes[n] = true;
        }
    }
    Ok(())
}

/// Robin faces with their owning subdomains (the faces Γ_Rj of the
/// decomposition of the Robin boundary).
pub fn decompose_robin_boundary(partition: &Partition) -> Result<Vec<RobinFace>> {
    if partition.robin_faces.is_empty() {
        return Err(Error::Decomposition("the Robin part of the boundary is empty".into()));
    }
    Ok(partition
        .robin_faces
        .iter()
        .map(|&f| RobinFace { subdomain: partition.faces[f].cells[0], face: f })
        .collect())
}

/// Splits subdomains into the strong-reaction class (reaction at least
/// `threshold` at every interior quadrature node) and the weak class.
/// The essential infimum is approximated by the minimum over the nodes of an
/// `order`-point rule.
pub fn classify_subdomains(
    partition: &Partition,
    reaction: &dyn Fn(&Point) -> f64,
    threshold: f64,
    order: usize,
) -> Result<Partition> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::InvalidParameter(format!("threshold P must be positive, got {threshold}")));
    }
    let mut strong = Vec::new();
    let mut weak = Vec::new();
    let mut mins = Vec::with_capacity(partition.n_cells());
    for cell in &partition.subdomains {
        let m = cell
            .quadrature(order)
            .iter()
            .map(|(x, _)| reaction(x))
            .fold(f64::INFINITY, f64::min);
        mins.push(m);
        if m >= threshold {
            strong.push(cell.id);
        } else {
            weak.push(cell.id);
        }
    }
    let mut out = partition.clone();
    out.classification = Some(Classification { threshold, strong, weak, reaction_min: mins });
    Ok(out)
}

/// Default threshold: a tenth of the largest reaction value at the
/// quadrature nodes (1 when the reaction vanishes identically).
pub fn default_threshold(partition: &Partition, reaction: &dyn Fn(&Point) -> f64, order: usize) -> f64 {
    let max = partition
        .subdomains
        .iter()
        .flat_map(|c| c.quadrature(order))
        .map(|(x, _)| reaction(&x))
        .fold(0.0f64, f64::max);
    if max > 0.0 {
        0.1 * max
    } else {
        1.0
    }
}
