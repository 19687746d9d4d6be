//! P1 finite elements: nodal fields, operator assembly, interpolation and
//! transfer between meshes.
//!
//! Coefficients are piecewise constant, evaluated from the centroid value of
//! the P1 field. The cubic reaction term uses the three-point interior rule
//! with barycentric nodes `(2/3, 1/6, 1/6)` and permutations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{self, Point};
use crate::mesh::{PointLocator, TriMesh};
use crate::sparse::CsrMatrix;

/// Barycentric nodes of the three-point rule, each with weight 1/3 of the
/// element area.
pub const QUAD_POINTS: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];
pub const QUAD_WEIGHT: f64 = 1.0 / 3.0;

/// One real value per mesh vertex, bound to the mesh it was created on.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    values: Vec<f64>,
    mesh_id: u64,
}

impl NodalField {
    pub fn new(mesh: &TriMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_vertices(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite nodal value at vertex {i}")));
        }
        Ok(NodalField {
            values,
            mesh_id: mesh.id(),
        })
    }

    pub fn zeros(mesh: &TriMesh) -> Self {
        Self::constant(mesh, 0.0)
    }

    pub fn constant(mesh: &TriMesh, c: f64) -> Self {
        NodalField {
            values: vec![c; mesh.num_vertices()],
            mesh_id: mesh.id(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fails unless the field was built on `mesh` (or a clone of it).
    pub fn check(&self, mesh: &TriMesh) -> Result<()> {
        if self.mesh_id != mesh.id() || self.values.len() != mesh.num_vertices() {
            return Err(Error::MeshMismatch);
        }
        Ok(())
    }

    /// Rebinds the values to `mesh`, which must have the same vertex count.
    /// Used for meshes that share connectivity, such as displaced copies.
    pub fn rebind(&self, mesh: &TriMesh) -> Result<NodalField> {
        NodalField::new(mesh, self.values.clone())
    }

    pub fn in_unit_box(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Elementwise coefficients `a(u) = 1 - (1-k) u` and `b(u) = 1 - u`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPair {
    pub a_of_u: Vec<f64>,
    pub b_of_u: Vec<f64>,
    pub k: f64,
}

impl CoefficientPair {
    pub fn from_field(mesh: &TriMesh, u: &[f64], k: f64) -> Self {
        let ubar = centroid_values(mesh, u);
        CoefficientPair {
            a_of_u: ubar.iter().map(|&x| 1.0 - (1.0 - k) * x).collect(),
            b_of_u: ubar.iter().map(|&x| 1.0 - x).collect(),
            k,
        }
    }

    /// Coefficients of an elementwise indicator (1 inside the inclusion).
    pub fn from_elementwise(chi: &[f64], k: f64) -> Self {
        CoefficientPair {
            a_of_u: chi.iter().map(|&x| 1.0 - (1.0 - k) * x).collect(),
            b_of_u: chi.iter().map(|&x| 1.0 - x).collect(),
            k,
        }
    }
}

/// Mean of the three vertex values on each triangle.
pub fn centroid_values(mesh: &TriMesh, u: &[f64]) -> Vec<f64> {
    mesh.triangles()
        .iter()
        .map(|t| (u[t[0]] + u[t[1]] + u[t[2]]) / 3.0)
        .collect()
}

/// Gradient of the P1 field `u` on triangle `t`. Differences against the
/// first vertex make it exactly zero for constants.
pub fn element_gradient(mesh: &TriMesh, t: usize, u: &[f64]) -> Point {
    let g = mesh.geometry(t);
    let tri = mesh.triangles()[t];
    let u0 = u[tri[0]];
    let (d1, d2) = (u[tri[1]] - u0, u[tri[2]] - u0);
    [
        d1 * g.grads[1][0] + d2 * g.grads[2][0],
        d1 * g.grads[1][1] + d2 * g.grads[2][1],
    ]
}

fn check_elementwise(mesh: &TriMesh, coeff: &[f64]) -> Result<()> {
    if coeff.len() != mesh.num_triangles() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_triangles(),
            found: coeff.len(),
        });
    }
    Ok(())
}

/// Assembles `sum_K coeff_K * local(K)` where `local` fills the 3x3 element
/// matrix (row-major) into the P1 pattern of `mesh`.
pub fn assemble_with(mesh: &TriMesh, mut local: impl FnMut(usize, &mut [f64; 9])) -> CsrMatrix {
    let pattern = mesh.pattern();
    let mut values = vec![0.0; pattern.col_idx.len()];
    let mut ke = [0.0; 9];
    for (t, slots) in pattern.element_slots.iter().enumerate() {
        ke.fill(0.0);
        local(t, &mut ke);
        for (s, v) in slots.iter().zip(&ke) {
            values[*s] += v;
        }
    }
    CsrMatrix::from_pattern(pattern, values, true)
}

pub fn stiffness_element(mesh: &TriMesh, t: usize, coeff: f64, ke: &mut [f64; 9]) {
    let g = mesh.geometry(t);
    for i in 0..3 {
        for j in 0..3 {
            ke[3 * i + j] += coeff * g.area * math::dot(g.grads[i], g.grads[j]);
        }
    }
}

pub fn mass_element(mesh: &TriMesh, t: usize, coeff: f64, ke: &mut [f64; 9]) {
    let a = coeff * mesh.area(t) / 12.0;
    for i in 0..3 {
        for j in 0..3 {
            ke[3 * i + j] += if i == j { 2.0 * a } else { a };
        }
    }
}

/// `K_ij = sum_K coeff_K int_K grad phi_i . grad phi_j`
pub fn assemble_stiffness(mesh: &TriMesh, coeff: &[f64]) -> Result<CsrMatrix> {
    check_elementwise(mesh, coeff)?;
    Ok(assemble_with(mesh, |t, ke| stiffness_element(mesh, t, coeff[t], ke)))
}

/// Consistent or row-sum lumped mass matrix with elementwise weights.
pub fn assemble_mass(mesh: &TriMesh, coeff: &[f64], lumped: bool) -> Result<CsrMatrix> {
    check_elementwise(mesh, coeff)?;
    let m = assemble_with(mesh, |t, ke| mass_element(mesh, t, coeff[t], ke));
    Ok(if lumped { lump(&m) } else { m })
}

/// Diagonal matrix of row sums.
pub fn lump(m: &CsrMatrix) -> CsrMatrix {
    CsrMatrix::from_diagonal(&m.row_sums())
}

/// `M_ij = sum_e int_e phi_i phi_j` over boundary edges, stored in the P1
/// pattern of `mesh`.
pub fn assemble_boundary_mass(mesh: &TriMesh) -> CsrMatrix {
    let pattern = mesh.pattern();
    let mut values = vec![0.0; pattern.col_idx.len()];
    let slot = |i: usize, j: usize| {
        let r = pattern.row_ptr[i]..pattern.row_ptr[i + 1];
        r.start + pattern.col_idx[r].binary_search(&j).expect("edge in pattern")
    };
    for e in mesh.boundary_edges() {
        let len = math::dist(mesh.vertices()[e[0]], mesh.vertices()[e[1]]);
        values[slot(e[0], e[0])] += len / 3.0;
        values[slot(e[1], e[1])] += len / 3.0;
        values[slot(e[0], e[1])] += len / 6.0;
        values[slot(e[1], e[0])] += len / 6.0;
    }
    CsrMatrix::from_pattern(pattern, values, true)
}

/// Values of the P1 field `y` at the three quadrature nodes of triangle `t`.
#[inline]
pub fn at_quad_points(tri: &[usize; 3], y: &[f64]) -> [f64; 3] {
    let (y0, y1, y2) = (y[tri[0]], y[tri[1]], y[tri[2]]);
    let mut out = [0.0; 3];
    for (q, l) in QUAD_POINTS.iter().enumerate() {
        out[q] = l[0] * y0 + l[1] * y1 + l[2] * y2;
    }
    out
}

/// `N_i = sum_K b_K int_K y^3 phi_i` by the three-point rule.
pub fn cubic_term(mesh: &TriMesh, b: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if b[t] == 0.0 {
            continue;
        }
        let w = b[t] * mesh.area(t) * QUAD_WEIGHT;
        let yq = at_quad_points(tri, y);
        for (q, l) in QUAD_POINTS.iter().enumerate() {
            let c = w * yq[q] * yq[q] * yq[q];
            for i in 0..3 {
                out[tri[i]] += c * l[i];
            }
        }
    }
    out
}

/// `sum_K int_K w_K(q) phi_i phi_j` with quadrature-node weights `w(t, q)`.
pub fn assemble_quad_mass(mesh: &TriMesh, mut w: impl FnMut(usize, usize) -> f64) -> CsrMatrix {
    assemble_with(mesh, |t, ke| {
        let area = mesh.area(t) * QUAD_WEIGHT;
        for (q, l) in QUAD_POINTS.iter().enumerate() {
            let c = area * w(t, q);
            if c == 0.0 {
                continue;
            }
            for i in 0..3 {
                for j in 0..3 {
                    ke[3 * i + j] += c * l[i] * l[j];
                }
            }
        }
    })
}

/// Derivative of [`cubic_term`]: `sum_K b_K int_K 3 y^2 phi_i phi_j`.
pub fn cubic_jacobian(mesh: &TriMesh, b: &[f64], y: &[f64]) -> CsrMatrix {
    let tris = mesh.triangles();
    assemble_quad_mass(mesh, |t, q| {
        let yq = at_quad_points(&tris[t], y)[q];
        3.0 * b[t] * yq * yq
    })
}

/// Consistent load `M f` of a nodal source.
pub fn load_vector(mesh: &TriMesh, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.area(t) / 12.0;
        let s = f[tri[0]] + f[tri[1]] + f[tri[2]];
        for &i in tri {
            out[i] += a * (s + f[i]);
        }
    }
    out
}

pub fn interpolate_nodal(mesh: &TriMesh, f: impl Fn(Point) -> f64) -> Result<NodalField> {
    let values: Vec<f64> = mesh.vertices().iter().map(|p| f(*p)).collect();
    NodalField::new(mesh, values)
}

/// Evaluates `field` (on `src`) at the vertices of `dst`.
pub fn transfer_field(src: &TriMesh, field: &NodalField, dst: &TriMesh) -> Result<NodalField> {
    field.check(src)?;
    if src.id() == dst.id() {
        return Ok(field.clone());
    }
    let locator = PointLocator::new(src);
    let values = dst
        .vertices()
        .iter()
        .map(|p| locator.evaluate(field.values(), *p))
        .collect::<Result<Vec<f64>>>()?;
    NodalField::new(dst, values)
}

/// Seven-point degree-five rule: barycentric nodes and weights summing to 1.
const DUNAVANT7: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    ([0.059715871789770, 0.470142064105115, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.059715871789770, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.470142064105115, 0.059715871789770], 0.132394152788506),
    ([0.797426985353087, 0.101286507323456, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.797426985353087, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.101286507323456, 0.797426985353087], 0.125939180544827),
];

/// `|v_h - g|_{L^2}` for a P1 field against a pointwise function, integrated
/// with a degree-five rule.
pub fn l2_error(mesh: &TriMesh, v: &[f64], g: impl Fn(Point) -> f64) -> f64 {
    let mut acc = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let c = mesh.corners(t);
        for (l, w) in DUNAVANT7.iter() {
            let p = [
                l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0],
                l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1],
            ];
            let vh = l[0] * v[tri[0]] + l[1] * v[tri[1]] + l[2] * v[tri[2]];
            let d = vh - g(p);
            acc += w * mesh.area(t) * d * d;
        }
    }
    math::sqrt(acc)
}

/// Norms and inner products of P1 fields on one mesh.
#[derive(Debug, Clone)]
pub struct Norms {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub boundary_mass: CsrMatrix,
}

impl Norms {
    pub fn new(mesh: &TriMesh) -> Self {
        let ones = vec![1.0; mesh.num_triangles()];
        Norms {
            mass: assemble_mass(mesh, &ones, false).expect("sizes match"),
            stiffness: assemble_stiffness(mesh, &ones).expect("sizes match"),
            boundary_mass: assemble_boundary_mass(mesh),
        }
    }

    pub fn l2(&self, v: &[f64]) -> f64 {
        math::sqrt(self.mass.bilinear(v, v).max(0.0))
    }

    pub fn h1(&self, v: &[f64]) -> f64 {
        math::sqrt((self.mass.bilinear(v, v) + self.stiffness.bilinear(v, v)).max(0.0))
    }

    pub fn boundary_l2(&self, v: &[f64]) -> f64 {
        math::sqrt(self.boundary_mass.bilinear(v, v).max(0.0))
    }
}
