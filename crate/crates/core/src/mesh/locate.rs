//! Point location by a uniform bucket grid over triangle bounding boxes.

use alloc::vec;
use alloc::vec::Vec;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::math::{self, Point};

/// Containing triangle and barycentric coordinates of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub triangle: usize,
    pub bary: [f64; 3],
}

pub struct PointLocator<'a> {
    mesh: &'a TriMesh,
    lo: Point,
    cell: Point,
    nx: usize,
    ny: usize,
    start: Vec<usize>,
    items: Vec<usize>,
    tol: f64,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in mesh.vertices() {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let nt = mesh.num_triangles();
        let side = math::sqrt(nt as f64).max(1.0);
        let nx = (side as usize).max(1);
        let ny = nx;
        let cell = [
            ((hi[0] - lo[0]) / nx as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / ny as f64).max(f64::MIN_POSITIVE),
        ];
        let diam = math::dist(lo, hi);
        let tol = 1e-10 * diam.max(1.0);
        let mut counts = vec![0usize; nx * ny + 1];
        let mut ranges = Vec::with_capacity(nt);
        for t in 0..nt {
            let c = mesh.corners(t);
            let (mut bl, mut bh) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for p in &c {
                for d in 0..2 {
                    bl[d] = bl[d].min(p[d] - tol);
                    bh[d] = bh[d].max(p[d] + tol);
                }
            }
            let (i0, j0) = Self::cell_of(lo, cell, nx, ny, bl);
            let (i1, j1) = Self::cell_of(lo, cell, nx, ny, bh);
            ranges.push((i0, j0, i1, j1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    counts[j * nx + i + 1] += 1;
                }
            }
        }
        for k in 0..nx * ny {
            counts[k + 1] += counts[k];
        }
        let mut fill = counts.clone();
        let mut items = vec![0usize; counts[nx * ny]];
        for (t, &(i0, j0, i1, j1)) in ranges.iter().enumerate() {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let c = j * nx + i;
                    items[fill[c]] = t;
                    fill[c] += 1;
                }
            }
        }
        PointLocator {
            mesh,
            lo,
            cell,
            nx,
            ny,
            start: counts,
            items,
            tol,
        }
    }

    fn cell_of(lo: Point, cell: Point, nx: usize, ny: usize, p: Point) -> (usize, usize) {
        let i = math::floor((p[0] - lo[0]) / cell[0]);
        let j = math::floor((p[1] - lo[1]) / cell[1]);
        (
            (i.max(0.0) as usize).min(nx - 1),
            (j.max(0.0) as usize).min(ny - 1),
        )
    }

    pub fn mesh(&self) -> &TriMesh {
        self.mesh
    }

    /// Triangle containing `p` with barycentric coordinates clamped to
    /// `[0, 1]`. Points within a small tolerance of the mesh boundary are
    /// accepted.
    pub fn locate(&self, p: Point) -> Result<Location> {
        let (i, j) = Self::cell_of(self.lo, self.cell, self.nx, self.ny, p);
        let c = j * self.nx + i;
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for &t in &self.items[self.start[c]..self.start[c + 1]] {
            let bary = barycentric(self.mesh.corners(t), p);
            let worst = bary[0].min(bary[1]).min(bary[2]);
            if best.map_or(true, |(w, _, _)| worst > w) {
                best = Some((worst, t, bary));
            }
        }
        match best {
            Some((worst, t, bary)) if worst * self.mesh.diameter(t) >= -self.tol => {
                let mut b = bary.map(math::clamp01);
                let s = b[0] + b[1] + b[2];
                for x in &mut b {
                    *x /= s;
                }
                Ok(Location { triangle: t, bary: b })
            }
            _ => Err(Error::OutsideDomain { x: p[0], y: p[1] }),
        }
    }

    /// P1 evaluation of the nodal `values` at `p`.
    pub fn evaluate(&self, values: &[f64], p: Point) -> Result<f64> {
        let loc = self.locate(p)?;
        let tri = self.mesh.triangles()[loc.triangle];
        Ok((0..3).map(|i| loc.bary[i] * values[tri[i]]).sum())
    }
}

/// Barycentric coordinates of `p` with respect to the triangle `c`.
pub fn barycentric(c: [Point; 3], p: Point) -> [f64; 3] {
    let det = math::orient(c[0], c[1], c[2]);
    let l0 = math::orient(p, c[1], c[2]) / det;
    let l1 = math::orient(c[0], p, c[2]) / det;
    [l0, l1, 1.0 - l0 - l1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_square_mesh, build_square_mesh_with, MeshPattern};
    use proptest::prelude::*;

    #[test]
    fn centroid_maps_to_own_triangle() {
        let m = build_square_mesh(0.25).unwrap();
        let loc = PointLocator::new(&m);
        for t in 0..m.num_triangles() {
            let l = loc.locate(m.centroid(t)).unwrap();
            assert_eq!(l.triangle, t);
            for b in l.bary {
                assert!((b - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertex_has_unit_coordinate() {
        let m = build_square_mesh(0.5).unwrap();
        let loc = PointLocator::new(&m);
        for (v, p) in m.vertices().iter().enumerate() {
            let l = loc.locate(*p).unwrap();
            let tri = m.triangles()[l.triangle];
            let k = tri.iter().position(|&x| x == v).expect("incident triangle");
            assert!((l.bary[k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_point_is_rejected() {
        let m = build_square_mesh(0.5).unwrap();
        let loc = PointLocator::new(&m);
        assert!(matches!(loc.locate([1.5, 0.0]), Err(Error::OutsideDomain { .. })));
        assert!(loc.locate([1.0, 1.0]).is_ok());
    }

    proptest! {
        #[test]
        fn barycentric_reconstruction(x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let m = build_square_mesh_with(MeshPattern::Lattice, 0.3).unwrap();
            let loc = PointLocator::new(&m);
            let l = loc.locate([x, y]).unwrap();
            let c = m.corners(l.triangle);
            let rx: f64 = (0..3).map(|i| l.bary[i] * c[i][0]).sum();
            let ry: f64 = (0..3).map(|i| l.bary[i] * c[i][1]).sum();
            prop_assert!((rx - x).abs() < 1e-12 && (ry - y).abs() < 1e-12);
            prop_assert!(l.bary.iter().all(|b| (0.0..=1.0).contains(b)));
        }
    }
}
