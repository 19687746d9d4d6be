//! Triangulations of polygonal domains.
//!
//! A [`TriMesh`] is immutable once built. Besides the raw vertex and triangle
//! arrays it carries derived data that the finite element code needs on every
//! assembly: element areas and barycentric gradients, the boundary edges and
//! the compressed sparsity pattern of P1 operators on the mesh.

mod adapt;
mod locate;
mod refine;

pub use adapt::{adapt_to_field, element_gradient_norms, mark_by_gradient, AdaptParams};
pub use locate::{Location, PointLocator};
pub use refine::refine;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{invalid, Error, Result};
use crate::cholesky::nested_dissection;
use crate::math::{self, Point};
use crate::sparse::CsrMatrix;

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed)
}

/// Default bound on circumradius / inradius accepted by [`TriMesh::validate`].
pub const DEFAULT_SHAPE_BOUND: f64 = 20.0;

/// Structured layouts for [`build_square_mesh_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeshPattern {
    /// Square cells split into four triangles through the cell centre.
    #[default]
    CrissCross,
    /// Square cells split along alternating diagonals. `h_target` is the cell
    /// side, so the longest edge is `sqrt(2) * h_target`.
    Diagonal,
    /// Staggered rows of nearly equilateral triangles.
    Lattice,
}

/// Refinement bookkeeping for a triangle produced by a green (bisection)
/// closure step. The two halves of a green pair point at each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GreenTag {
    pub sibling: usize,
    pub parent: [usize; 3],
}

/// Area and barycentric-coordinate gradients of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    pub grads: [Point; 3],
}

/// CSR sparsity pattern of the P1 vertex graph plus, per triangle, the nine
/// CSR slots of its local element matrix (row-major).
#[derive(Debug, Clone)]
pub struct SparsityPattern {
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub element_slots: Vec<[usize; 9]>,
}

/// Indices of refine and coarsen candidates, disjoint by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdaptationMarking {
    pub refine_set: Vec<usize>,
    pub coarsen_set: Vec<usize>,
}

impl AdaptationMarking {
    pub fn refine_only(refine_set: Vec<usize>) -> Self {
        AdaptationMarking {
            refine_set,
            coarsen_set: Vec::new(),
        }
    }

    pub fn is_disjoint(&self) -> bool {
        let mut r = self.refine_set.clone();
        r.sort_unstable();
        self.coarsen_set.iter().all(|c| r.binary_search(c).is_err())
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    id: u64,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    h_max: f64,
    green: Vec<Option<GreenTag>>,
    geometry: Vec<ElementGeometry>,
    on_boundary: Vec<bool>,
    pattern: SparsityPattern,
    ordering: Vec<usize>,
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.triangles == other.triangles
    }
}

impl TriMesh {
    /// Builds a mesh from raw arrays. Triangles must be counterclockwise with
    /// strictly positive area and the boundary must consist of closed loops.
    pub fn from_parts(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let green = vec![None; triangles.len()];
        Self::from_parts_tagged(vertices, triangles, green)
    }

    pub(crate) fn from_parts_tagged(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        green: Vec<Option<GreenTag>>,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        let nv = vertices.len();
        let mut geometry = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!("triangle {t} has an out-of-range vertex")));
            }
            let g = element_geometry(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !(g.area > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has non-positive signed area {}",
                    g.area
                )));
            }
            geometry.push(g);
        }
        if vertices.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }

        let mut edge_count: BTreeMap<(usize, usize), (usize, [usize; 2])> = BTreeMap::new();
        for tri in &triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let key = if a < b { (a, b) } else { (b, a) };
                let entry = edge_count.entry(key).or_insert((0, [a, b]));
                entry.0 += 1;
            }
        }
        let mut boundary_edges = Vec::new();
        let mut h_max: f64 = 0.0;
        for (&(a, b), &(count, oriented)) in &edge_count {
            h_max = h_max.max(math::dist(vertices[a], vertices[b]));
            match count {
                1 => boundary_edges.push(oriented),
                2 => {}
                c => {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a}, {b}) is shared by {c} triangles"
                    )))
                }
            }
        }
        let mut on_boundary = vec![false; nv];
        for e in &boundary_edges {
            on_boundary[e[0]] = true;
            on_boundary[e[1]] = true;
        }
        check_boundary_loops(nv, &boundary_edges)?;

        let pattern = build_pattern(nv, &triangles);
        let adjacency = CsrMatrix::from_pattern(&pattern, vec![0.0; pattern.col_idx.len()], true);
        let ordering = nested_dissection(&vertices, &adjacency);
        Ok(TriMesh {
            id: fresh_id(),
            vertices,
            triangles,
            boundary_edges,
            h_max,
            green,
            geometry,
            on_boundary,
            pattern,
            ordering,
        })
    }

    /// Identifier binding nodal fields to this mesh. Clones share the id.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn green_tags(&self) -> &[Option<GreenTag>] {
        &self.green
    }

    pub fn geometry(&self, t: usize) -> &ElementGeometry {
        &self.geometry[t]
    }

    pub fn area(&self, t: usize) -> f64 {
        self.geometry[t].area
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.on_boundary[v]
    }

    /// Sorted indices of the vertices on the boundary.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&v| self.on_boundary[v]).collect()
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    /// Fill-reducing vertex order for direct factorization (`order[new] = old`).
    pub fn fill_ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Longest edge of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        math::dist(a, b).max(math::dist(b, c)).max(math::dist(c, a))
    }

    /// Circumradius over inradius for triangle `t` (2 for equilateral).
    pub fn shape_ratio(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        let (la, lb, lc) = (math::dist(b, c), math::dist(c, a), math::dist(a, b));
        let area = self.geometry[t].area;
        let circum = la * lb * lc / (4.0 * area);
        let inr = 2.0 * area / (la + lb + lc);
        circum / inr
    }

    pub fn max_shape_ratio(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| self.shape_ratio(t))
            .fold(0.0, f64::max)
    }

    /// Checks every structural invariant, with `shape_bound` the accepted
    /// circumradius / inradius ratio.
    pub fn validate(&self, shape_bound: f64) -> Result<()> {
        for t in 0..self.num_triangles() {
            if !(self.geometry[t].area > 0.0) {
                return Err(Error::InvalidMesh(format!("triangle {t} is degenerate")));
            }
            let r = self.shape_ratio(t);
            if r > shape_bound {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has shape ratio {r} above bound {shape_bound}"
                )));
            }
        }
        check_boundary_loops(self.num_vertices(), &self.boundary_edges)
    }

    /// Triangles adjacent across each edge (`None` on the boundary). Entry
    /// `e` of triangle `t` is the neighbour across edge `(v[e], v[e+1])`.
    pub fn neighbors(&self) -> Vec<[Option<usize>; 3]> {
        let mut map: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
        let mut out = vec![[None; 3]; self.num_triangles()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let key = if a < b { (a, b) } else { (b, a) };
                if let Some((s, se)) = map.remove(&key) {
                    out[t][e] = Some(s);
                    out[s][se] = Some(t);
                } else {
                    map.insert(key, (t, e));
                }
            }
        }
        out
    }

    /// Same connectivity with each vertex moved to `x + t * v(x)`.
    pub fn displaced(&self, displacement: &[Point], t: f64) -> Result<TriMesh> {
        if displacement.len() != self.num_vertices() {
            return Err(Error::DimensionMismatch {
                expected: self.num_vertices(),
                found: displacement.len(),
            });
        }
        let vertices = self
            .vertices
            .iter()
            .zip(displacement)
            .map(|(p, d)| [p[0] + t * d[0], p[1] + t * d[1]])
            .collect();
        TriMesh::from_parts_tagged(vertices, self.triangles.clone(), self.green.clone())
    }
}

pub fn element_geometry(a: Point, b: Point, c: Point) -> ElementGeometry {
    let det = math::orient(a, b, c);
    let area = 0.5 * det;
    let inv = 1.0 / det;
    let grads = [
        [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
        [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
        [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
    ];
    ElementGeometry { area, grads }
}

fn check_boundary_loops(nv: usize, edges: &[[usize; 2]]) -> Result<()> {
    // Each boundary vertex must have matching in/out degree so the edges
    // decompose into closed loops.
    let mut out_deg = vec![0u32; nv];
    let mut in_deg = vec![0u32; nv];
    for e in edges {
        out_deg[e[0]] += 1;
        in_deg[e[1]] += 1;
    }
    if out_deg.iter().zip(&in_deg).any(|(o, i)| o != i) {
        return Err(Error::InvalidMesh("boundary edges do not form closed loops".into()));
    }
    Ok(())
}

fn build_pattern(nv: usize, triangles: &[[usize; 3]]) -> SparsityPattern {
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(triangles.len() * 9);
    for tri in triangles {
        for &i in tri {
            for &j in tri {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut row_ptr = vec![0usize; nv + 1];
    for &(i, _) in &pairs {
        row_ptr[i + 1] += 1;
    }
    for i in 0..nv {
        row_ptr[i + 1] += row_ptr[i];
    }
    let col_idx: Vec<usize> = pairs.iter().map(|&(_, j)| j).collect();
    let element_slots = triangles
        .iter()
        .map(|tri| {
            let mut slots = [0usize; 9];
            for (a, &i) in tri.iter().enumerate() {
                let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
                for (b, &j) in tri.iter().enumerate() {
                    let pos = row.binary_search(&j).expect("pattern contains element pairs");
                    slots[3 * a + b] = row_ptr[i] + pos;
                }
            }
            slots
        })
        .collect();
    SparsityPattern {
        row_ptr,
        col_idx,
        element_slots,
    }
}

/// Mesh of `(-1, 1)^2` with the default criss-cross pattern and longest edge
/// at most `h_target`.
pub fn build_square_mesh(h_target: f64) -> Result<TriMesh> {
    build_square_mesh_with(MeshPattern::CrissCross, h_target)
}

pub fn build_square_mesh_with(pattern: MeshPattern, h_target: f64) -> Result<TriMesh> {
    build_rectangle_mesh(pattern, [-1.0, -1.0], [1.0, 1.0], h_target)
}

/// Structured mesh of the axis-aligned rectangle `[lo, hi]`.
pub fn build_rectangle_mesh(pattern: MeshPattern, lo: Point, hi: Point, h_target: f64) -> Result<TriMesh> {
    let (wx, wy) = (hi[0] - lo[0], hi[1] - lo[1]);
    if !(wx > 0.0 && wy > 0.0) {
        return Err(invalid("rectangle must have positive extents"));
    }
    let longest = wx.max(wy);
    if !(h_target > 0.0) || h_target > longest || !h_target.is_finite() {
        return Err(invalid(format!(
            "h_target must lie in (0, {longest}], got {h_target}"
        )));
    }
    let cells = |w: f64| -> usize { libm::ceil(w / h_target - 1e-12).max(1.0) as usize };
    match pattern {
        MeshPattern::CrissCross => {
            let (nx, ny) = (cells(wx), cells(wy));
            let (dx, dy) = (wx / nx as f64, wy / ny as f64);
            // square-ish cells keep h_max <= h_target
            let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) + nx * ny);
            for j in 0..=ny {
                for i in 0..=nx {
                    vertices.push([lo[0] + i as f64 * dx, lo[1] + j as f64 * dy]);
                }
            }
            let corner = |i: usize, j: usize| j * (nx + 1) + i;
            let mut triangles = Vec::with_capacity(4 * nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let m = vertices.len();
                    vertices.push([lo[0] + (i as f64 + 0.5) * dx, lo[1] + (j as f64 + 0.5) * dy]);
                    let (c00, c10, c11, c01) = (corner(i, j), corner(i + 1, j), corner(i + 1, j + 1), corner(i, j + 1));
                    triangles.push([c00, c10, m]);
                    triangles.push([c10, c11, m]);
                    triangles.push([c11, c01, m]);
                    triangles.push([c01, c00, m]);
                }
            }
            TriMesh::from_parts(vertices, triangles)
        }
        MeshPattern::Diagonal => {
            let (nx, ny) = (cells(wx), cells(wy));
            let (dx, dy) = (wx / nx as f64, wy / ny as f64);
            let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
            for j in 0..=ny {
                for i in 0..=nx {
                    vertices.push([lo[0] + i as f64 * dx, lo[1] + j as f64 * dy]);
                }
            }
            let corner = |i: usize, j: usize| j * (nx + 1) + i;
            let mut triangles = Vec::with_capacity(2 * nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let (c00, c10, c11, c01) = (corner(i, j), corner(i + 1, j), corner(i + 1, j + 1), corner(i, j + 1));
                    if (i + j) % 2 == 0 {
                        triangles.push([c00, c10, c11]);
                        triangles.push([c00, c11, c01]);
                    } else {
                        triangles.push([c00, c10, c01]);
                        triangles.push([c10, c11, c01]);
                    }
                }
            }
            TriMesh::from_parts(vertices, triangles)
        }
        MeshPattern::Lattice => {
            let nx = cells(wx);
            let ny = libm::ceil(wy / (h_target * 0.5 * math::sqrt(3.0)) - 1e-12).max(1.0) as usize;
            let (dx, dy) = (wx / nx as f64, wy / ny as f64);
            let mut vertices = Vec::new();
            let mut rows: Vec<Vec<usize>> = Vec::with_capacity(ny + 1);
            for j in 0..=ny {
                let y = lo[1] + j as f64 * dy;
                let mut row = Vec::new();
                if j % 2 == 0 {
                    for i in 0..=nx {
                        row.push(vertices.len());
                        vertices.push([lo[0] + i as f64 * dx, y]);
                    }
                } else {
                    row.push(vertices.len());
                    vertices.push([lo[0], y]);
                    for i in 0..nx {
                        row.push(vertices.len());
                        vertices.push([lo[0] + (i as f64 + 0.5) * dx, y]);
                    }
                    row.push(vertices.len());
                    vertices.push([hi[0], y]);
                }
                rows.push(row);
            }
            let mut triangles = Vec::new();
            for j in 0..ny {
                zip_rows(&vertices, &rows[j], &rows[j + 1], &mut triangles);
            }
            TriMesh::from_parts(vertices, triangles)
        }
    }
}

/// Triangulates the strip between two rows of points sorted by x.
fn zip_rows(vertices: &[Point], bottom: &[usize], top: &[usize], out: &mut Vec<[usize; 3]>) {
    let (mut i, mut j) = (0, 0);
    while i + 1 < bottom.len() || j + 1 < top.len() {
        let advance_bottom = if i + 1 >= bottom.len() {
            false
        } else if j + 1 >= top.len() {
            true
        } else {
            let nb = vertices[bottom[i + 1]][0];
            let nt = vertices[top[j + 1]][0];
            if (nb - nt).abs() < 1e-12 {
                // tie: take the shorter diagonal
                math::dist(vertices[bottom[i + 1]], vertices[top[j]])
                    <= math::dist(vertices[bottom[i]], vertices[top[j + 1]])
            } else {
                nb < nt
            }
        };
        if advance_bottom {
            out.push([bottom[i], bottom[i + 1], top[j]]);
            i += 1;
        } else {
            out.push([bottom[i], top[j + 1], top[j]]);
            j += 1;
        }
    }
}
