//! Sharp-interface comparator.
//!
//! An inclusion is a union of disjoint simple polygons. On a fixed mesh its
//! coefficients are taken elementwise from the covered area fraction, so the
//! cost is a continuous function of the boundary points. The shape gradient
//! is evaluated at the boundary points from one-sided element traces; the
//! material derivative and the relaxed directional derivative are exact
//! derivatives of the discrete problems under the mesh deformation `x + tV`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::adjoint::{solve_adjoint_with, state_operator};
use crate::cholesky::solve_on_mesh;
use crate::error::{invalid, Error, Result};
use crate::fem::{
    assemble_boundary_mass, assemble_quad_mass, at_quad_points, element_gradient, CoefficientPair, NodalField,
    QUAD_POINTS, QUAD_WEIGHT,
};
use crate::forward::{segment_distance, ForwardProblem, DEFAULT_NEWTON_TOL};
use crate::math::{self, Point};
use crate::mesh::{PointLocator, TriMesh};
use crate::objective::{Measurement, ObjectiveParams};
use crate::sparse::CsrMatrix;

/// Minimum number of points kept on a loop by resampling.
pub const MIN_LOOP_POINTS: usize = 12;

/// Union of disjoint simple closed polygons, each stored counterclockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonInclusion {
    loops: Vec<Vec<Point>>,
}

impl PolygonInclusion {
    /// Validates and orients the loops. Clockwise loops are reversed.
    pub fn new(loops: Vec<Vec<Point>>) -> Result<Self> {
        if loops.is_empty() {
            return Err(Error::Geometry("an inclusion needs at least one loop".into()));
        }
        let mut out = Vec::with_capacity(loops.len());
        for mut l in loops {
            if l.len() < 3 {
                return Err(Error::Geometry(format!("loop with {} points", l.len())));
            }
            if l.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
                return Err(Error::Geometry("non-finite boundary point".into()));
            }
            let area = loop_area(&l);
            if !(area.abs() > 0.0) {
                return Err(Error::Geometry("loop has zero area".into()));
            }
            if area < 0.0 {
                l.reverse();
            }
            out.push(l);
        }
        let inc = PolygonInclusion { loops: out };
        inc.check_edges()?;
        if !inc.is_simple() {
            return Err(Error::Geometry("loops intersect".into()));
        }
        Ok(inc)
    }

    /// Regular `n`-gon inscribed in the circle.
    pub fn disc(center: Point, radius: f64, n: usize) -> Result<Self> {
        Self::new(vec![circle_points(center, radius, n)])
    }

    pub fn loops(&self) -> &[Vec<Point>] {
        &self.loops
    }

    pub fn num_points(&self) -> usize {
        self.loops.iter().map(Vec::len).sum()
    }

    pub fn area(&self) -> f64 {
        self.loops.iter().map(|l| loop_area(l)).sum()
    }

    pub fn perimeter(&self) -> f64 {
        self.loops
            .iter()
            .map(|l| (0..l.len()).map(|i| math::dist(l[i], l[(i + 1) % l.len()])).sum::<f64>())
            .sum()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.loops.iter().any(|l| crate::data::point_in_polygon(l, p))
    }

    fn check_edges(&self) -> Result<()> {
        for l in &self.loops {
            let n = l.len();
            for i in 0..n {
                if !(math::dist(l[i], l[(i + 1) % n]) > 0.0) {
                    return Err(Error::Geometry("repeated boundary point".into()));
                }
            }
        }
        Ok(())
    }

    /// No two edges meet except consecutive ones at their shared point.
    pub fn is_simple(&self) -> bool {
        let mut edges = Vec::new();
        for (li, l) in self.loops.iter().enumerate() {
            let n = l.len();
            for i in 0..n {
                edges.push((li, i, n, l[i], l[(i + 1) % n]));
            }
        }
        for (x, &(la, ia, na, a0, a1)) in edges.iter().enumerate() {
            let (blo, bhi) = bbox2(a0, a1);
            for &(lb, ib, _, b0, b1) in &edges[x + 1..] {
                if la == lb && (ib == (ia + 1) % na || ia == (ib + 1) % na) {
                    // neighbours share a point; only a fold back counts
                    if math::orient(a0, a1, if ib == (ia + 1) % na { b1 } else { b0 }) == 0.0 {
                        let other = if ib == (ia + 1) % na { b1 } else { b0 };
                        let shared = if ib == (ia + 1) % na { a1 } else { a0 };
                        let far = if ib == (ia + 1) % na { a0 } else { a1 };
                        if math::dot(math::sub(other, shared), math::sub(far, shared)) > 0.0 {
                            return false;
                        }
                    }
                    continue;
                }
                let (clo, chi) = bbox2(b0, b1);
                if clo[0] > bhi[0] || chi[0] < blo[0] || clo[1] > bhi[1] || chi[1] < blo[1] {
                    continue;
                }
                if segments_intersect(a0, a1, b0, b1) {
                    return false;
                }
            }
        }
        true
    }

    /// Smallest distance from a boundary point to the edges of `[lo, hi]`
    /// (negative when a point lies outside).
    pub fn collar_distance(&self, lo: Point, hi: Point) -> f64 {
        self.loops
            .iter()
            .flatten()
            .map(|p| (p[0] - lo[0]).min(hi[0] - p[0]).min(p[1] - lo[1]).min(hi[1] - p[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Outward unit normal at every boundary point: the normalized mean of
    /// the normals of the two adjacent edges.
    pub fn normals(&self) -> Result<Vec<Vec<Point>>> {
        self.loops
            .iter()
            .map(|l| {
                let n = l.len();
                (0..n)
                    .map(|i| {
                        let prev = edge_normal(l[(i + n - 1) % n], l[i]);
                        let next = edge_normal(l[i], l[(i + 1) % n]);
                        let s = math::add(prev, next);
                        let len = math::norm(s);
                        if !(len > 1e-12) {
                            return Err(Error::Geometry("boundary folds back on itself".into()));
                        }
                        Ok(math::scale(s, 1.0 / len))
                    })
                    .collect()
            })
            .collect()
    }

    /// Turning angle over the mean length of the adjacent edges; positive
    /// where the inclusion is convex.
    pub fn curvature(&self) -> Vec<Vec<f64>> {
        self.loops
            .iter()
            .map(|l| {
                let n = l.len();
                (0..n)
                    .map(|i| {
                        let e0 = math::sub(l[i], l[(i + n - 1) % n]);
                        let e1 = math::sub(l[(i + 1) % n], l[i]);
                        let theta = math::atan2(math::cross(e0, e1), math::dot(e0, e1));
                        theta / (0.5 * (math::norm(e0) + math::norm(e1)))
                    })
                    .collect()
            })
            .collect()
    }

    /// Half the sum of the adjacent edge lengths at every point.
    pub fn dual_lengths(&self) -> Vec<Vec<f64>> {
        self.loops
            .iter()
            .map(|l| {
                let n = l.len();
                (0..n)
                    .map(|i| 0.5 * (math::dist(l[(i + n - 1) % n], l[i]) + math::dist(l[i], l[(i + 1) % n])))
                    .collect()
            })
            .collect()
    }

    /// Points moved by `step * v`, without validation.
    pub fn moved(&self, v: &VelocityField, step: f64) -> Result<Vec<Vec<Point>>> {
        if v.loops.len() != self.loops.len() || v.loops.iter().zip(&self.loops).any(|(a, b)| a.len() != b.len()) {
            return Err(invalid("velocity does not match the inclusion"));
        }
        Ok(self
            .loops
            .iter()
            .zip(&v.loops)
            .map(|(l, w)| l.iter().zip(w).map(|(p, d)| math::add(*p, math::scale(*d, step))).collect())
            .collect())
    }

    /// Every loop redistributed at uniform arc length with spacing close to
    /// `spacing` (at least [`MIN_LOOP_POINTS`] points).
    pub fn resampled(&self, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(invalid("resampling spacing must be positive"));
        }
        let loops = self
            .loops
            .iter()
            .map(|l| {
                let per: f64 = (0..l.len()).map(|i| math::dist(l[i], l[(i + 1) % l.len()])).sum();
                let n = (libm::round(per / spacing) as usize).max(MIN_LOOP_POINTS);
                resample_uniform(l, n)
            })
            .collect();
        Self::new(loops)
    }

    /// Area of `K ∩ inclusion` over `|K|` for every triangle `K`.
    pub fn indicator(&self, mesh: &TriMesh) -> Vec<f64> {
        let mut chi = vec![0.0; mesh.num_triangles()];
        for l in &self.loops {
            let (llo, lhi) = points_bbox(l);
            let n = l.len();
            for (t, c) in chi.iter_mut().enumerate() {
                let mut tri = mesh.corners(t);
                let (tlo, thi) = points_bbox(&tri);
                if tlo[0] > lhi[0] || thi[0] < llo[0] || tlo[1] > lhi[1] || thi[1] < llo[1] {
                    continue;
                }
                let crossed = (0..n).any(|i| {
                    let (elo, ehi) = bbox2(l[i], l[(i + 1) % n]);
                    !(elo[0] > thi[0] || ehi[0] < tlo[0] || elo[1] > thi[1] || ehi[1] < tlo[1])
                });
                if !crossed {
                    if crate::data::point_in_polygon(l, mesh.centroid(t)) {
                        *c += 1.0;
                    }
                    continue;
                }
                if math::orient(tri[0], tri[1], tri[2]) < 0.0 {
                    tri.swap(1, 2);
                }
                *c += (clip_area(l, tri) / mesh.area(t)).max(0.0);
            }
        }
        chi.iter_mut().for_each(|c| *c = c.min(1.0));
        chi
    }

    /// Distance to the boundary, positive inside.
    pub fn signed_distance(&self, p: Point) -> f64 {
        let d = self
            .loops
            .iter()
            .flat_map(|l| (0..l.len()).map(move |i| segment_distance(p, l[i], l[(i + 1) % l.len()])))
            .fold(f64::INFINITY, f64::min);
        if self.contains(p) {
            d
        } else {
            -d
        }
    }

    /// Nodal phase field with the one-dimensional optimal profile
    /// `(1 + sin(d / eps)) / 2` across the boundary, `d` the signed distance.
    pub fn smoothed_indicator(&self, mesh: &TriMesh, eps: f64) -> Result<NodalField> {
        if !(eps > 0.0) {
            return Err(invalid("eps must be positive"));
        }
        let vals = mesh
            .vertices()
            .iter()
            .map(|&p| optimal_profile(self.signed_distance(p) / eps))
            .collect();
        NodalField::new(mesh, vals)
    }
}

/// `(1 + sin s) / 2` clipped to `[0, 1]` outside `|s| <= pi/2`.
pub fn optimal_profile(s: f64) -> f64 {
    let h = core::f64::consts::FRAC_PI_2;
    if s >= h {
        1.0
    } else if s <= -h {
        0.0
    } else {
        0.5 * (1.0 + math::sin(s))
    }
}

pub fn circle_points(center: Point, radius: f64, n: usize) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let th = 2.0 * core::f64::consts::PI * i as f64 / n as f64;
            [center[0] + radius * math::cos(th), center[1] + radius * math::sin(th)]
        })
        .collect()
}

fn loop_area(l: &[Point]) -> f64 {
    crate::data::polygon_area(l)
}

fn edge_normal(a: Point, b: Point) -> Point {
    let e = math::sub(b, a);
    math::scale([e[1], -e[0]], 1.0 / math::norm(e))
}

fn bbox2(a: Point, b: Point) -> (Point, Point) {
    ([a[0].min(b[0]), a[1].min(b[1])], [a[0].max(b[0]), a[1].max(b[1])])
}

fn points_bbox(v: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in v {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (lo, hi)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2) = (math::orient(a, b, c), math::orient(a, b, d));
    let (o3, o4) = (math::orient(c, d, a), math::orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Signed area of the part of the counterclockwise polygon `subject` inside
/// the counterclockwise triangle `tri` (Sutherland-Hodgman).
fn clip_area(subject: &[Point], tri: [Point; 3]) -> f64 {
    let mut poly = subject.to_vec();
    let mut next = Vec::with_capacity(poly.len() + 8);
    for i in 0..3 {
        let (a, b) = (tri[i], tri[(i + 1) % 3]);
        next.clear();
        let n = poly.len();
        for j in 0..n {
            let (p, q) = (poly[j], poly[(j + 1) % n]);
            let (sp, sq) = (math::orient(a, b, p), math::orient(a, b, q));
            if sp >= 0.0 {
                next.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                next.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        core::mem::swap(&mut poly, &mut next);
        if poly.len() < 3 {
            return 0.0;
        }
    }
    crate::data::polygon_area(&poly)
}

/// `n` points at uniform arc length along the closed polyline, starting at
/// its first point.
fn resample_uniform(l: &[Point], n: usize) -> Vec<Point> {
    let m = l.len();
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    for i in 0..m {
        cum.push(cum[i] + math::dist(l[i], l[(i + 1) % m]));
    }
    let per = cum[m];
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = per * k as f64 / n as f64;
        while seg + 1 < m && cum[seg + 1] <= s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let (a, b) = (l[seg], l[(seg + 1) % m]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

/// One vector per boundary point.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub loops: Vec<Vec<Point>>,
}

impl VelocityField {
    pub fn max_norm(&self) -> f64 {
        self.loops.iter().flatten().map(|v| math::norm(*v)).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> VelocityField {
        VelocityField {
            loops: self.loops.iter().map(|l| l.iter().map(|v| math::scale(*v, s)).collect()).collect(),
        }
    }
}

/// Weight of the curvature (perimeter) term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureWeight {
    /// `alpha * Per`, the sharp regularization.
    Alpha,
    /// `alpha * pi/4 * Per`, the limit of the Ginzburg-Landau energy.
    GammaLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpParams {
    pub alpha: f64,
    pub k: f64,
    pub curvature: CurvatureWeight,
    pub newton_tol: f64,
}

impl SharpParams {
    pub fn new(alpha: f64, k: f64) -> Self {
        SharpParams {
            alpha,
            k,
            curvature: CurvatureWeight::Alpha,
            newton_tol: DEFAULT_NEWTON_TOL,
        }
    }

    pub fn perimeter_weight(&self) -> f64 {
        match self.curvature {
            CurvatureWeight::Alpha => self.alpha,
            CurvatureWeight::GammaLimit => self.alpha * core::f64::consts::FRAC_PI_4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha must be non-negative"));
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(invalid("k must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SharpCost {
    pub j_pde: f64,
    pub perimeter: f64,
    pub regularization: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct SharpEvaluation {
    pub cost: SharpCost,
    pub chi: Vec<f64>,
    pub states: Vec<NodalField>,
}

/// Boundary integrand `g` and the steepest-descent velocity `-g nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeGradient {
    pub g: Vec<Vec<f64>>,
    pub normals: Vec<Vec<Point>>,
    pub velocity: VelocityField,
}

impl ShapeGradient {
    /// Boundary form `sum_i g_i (W(x_i) . nu_i) l_i` of the derivative in
    /// the direction of the smooth field `w`.
    pub fn directional(&self, inc: &PolygonInclusion, w: impl Fn(Point) -> Point) -> f64 {
        let lens = inc.dual_lengths();
        let mut total = 0.0;
        for (li, l) in inc.loops().iter().enumerate() {
            for (i, p) in l.iter().enumerate() {
                total += self.g[li][i] * math::dot(w(*p), self.normals[li][i]) * lens[li][i];
            }
        }
        total
    }
}

/// Sharp cost `J_pde(chi) + w Per` on a fixed mesh.
pub struct SharpObjective<'a> {
    pub mesh: &'a TriMesh,
    pub measurements: &'a [Measurement],
    pub params: SharpParams,
    boundary_mass: CsrMatrix,
    locator: PointLocator<'a>,
}

impl<'a> SharpObjective<'a> {
    pub fn new(mesh: &'a TriMesh, measurements: &'a [Measurement], params: SharpParams) -> Result<Self> {
        params.validate()?;
        if measurements.is_empty() {
            return Err(invalid("at least one measurement is required"));
        }
        for m in measurements {
            m.f.check(mesh)?;
            m.y_meas.check(mesh)?;
        }
        Ok(SharpObjective {
            mesh,
            measurements,
            params,
            boundary_mass: assemble_boundary_mass(mesh),
            locator: PointLocator::new(mesh),
        })
    }

    fn coefficients(&self, chi: &[f64]) -> CoefficientPair {
        CoefficientPair::from_elementwise(chi, self.params.k)
    }

    pub fn evaluate(&self, inc: &PolygonInclusion, warm: Option<&[NodalField]>) -> Result<SharpEvaluation> {
        let chi = inc.indicator(self.mesh);
        let coeffs = self.coefficients(&chi);
        let mut states = Vec::with_capacity(self.measurements.len());
        let mut j_pde = 0.0;
        for (i, m) in self.measurements.iter().enumerate() {
            let problem = ForwardProblem::new(self.mesh, coeffs.clone(), m.f.values())?;
            let y0 = warm.and_then(|w| w.get(i)).map(|y| y.values());
            let y = problem.solve(y0, self.params.newton_tol)?.y;
            let d: Vec<f64> = y.values().iter().zip(m.y_meas.values()).map(|(a, b)| a - b).collect();
            j_pde += 0.5 * self.boundary_mass.bilinear(&d, &d);
            states.push(y);
        }
        j_pde /= self.measurements.len() as f64;
        let perimeter = inc.perimeter();
        let regularization = self.params.perimeter_weight() * perimeter;
        Ok(SharpEvaluation {
            cost: SharpCost {
                j_pde,
                perimeter,
                regularization,
                total: j_pde + regularization,
            },
            chi,
            states,
        })
    }

    fn adjoints(&self, eval: &SharpEvaluation) -> Result<Vec<NodalField>> {
        let coeffs = self.coefficients(&eval.chi);
        eval.states
            .iter()
            .zip(self.measurements)
            .map(|(y, m)| {
                solve_adjoint_with(self.mesh, &coeffs, y.values(), m.y_meas.values(), &self.boundary_mass).map(|a| a.p)
            })
            .collect()
    }

    /// `g = (1-k)(d_t y d_t p + (1/k) d_n y^e d_n p^e) + y^3 p + w kappa` at
    /// every boundary point, averaged over measurements. Traces come from the
    /// element reached by stepping 0.6 local mesh sizes outward.
    pub fn gradient(&self, inc: &PolygonInclusion, eval: &SharpEvaluation) -> Result<ShapeGradient> {
        let adj = self.adjoints(eval)?;
        let normals = inc.normals()?;
        let kappa = inc.curvature();
        let k = self.params.k;
        let weight = self.params.perimeter_weight();
        let scale = 1.0 / self.measurements.len() as f64;
        let mut g = Vec::with_capacity(inc.loops().len());
        for (li, l) in inc.loops().iter().enumerate() {
            let mut gl = Vec::with_capacity(l.len());
            for (i, &x) in l.iter().enumerate() {
                let nu = normals[li][i];
                let tau = [-nu[1], nu[0]];
                let here = self.locator.locate(x)?;
                let xe = math::add(x, math::scale(nu, 0.6 * self.mesh.diameter(here.triangle)));
                let te = self.locator.locate(xe)?.triangle;
                let mut v = 0.0;
                for (y, p) in eval.states.iter().zip(&adj) {
                    let (y, p) = (y.values(), p.values());
                    let gy = element_gradient(self.mesh, te, y);
                    let gp = element_gradient(self.mesh, te, p);
                    let tri = self.mesh.triangles()[here.triangle];
                    let yx: f64 = (0..3).map(|j| here.bary[j] * y[tri[j]]).sum();
                    let px: f64 = (0..3).map(|j| here.bary[j] * p[tri[j]]).sum();
                    v += (1.0 - k)
                        * (math::dot(gy, tau) * math::dot(gp, tau) + math::dot(gy, nu) * math::dot(gp, nu) / k)
                        + yx * yx * yx * px;
                }
                gl.push(scale * v + weight * kappa[li][i]);
            }
            g.push(gl);
        }
        let velocity = VelocityField {
            loops: g
                .iter()
                .zip(&normals)
                .map(|(gl, nl)| gl.iter().zip(nl).map(|(gi, n)| math::scale(*n, -gi)).collect())
                .collect(),
        };
        Ok(ShapeGradient { g, normals, velocity })
    }

    /// Derivative of the sharp cost along the nodal deformation field `v`:
    /// the misfit part through the volume (material derivative) form with
    /// the area fractions carried by the mesh, the perimeter part exactly
    /// on the polygon with `v` interpolated at the boundary points.
    pub fn directional_derivative(&self, inc: &PolygonInclusion, eval: &SharpEvaluation, v: &[Point]) -> Result<f64> {
        check_deformation(self.mesh, v)?;
        let adj = self.adjoints(eval)?;
        let coeffs = self.coefficients(&eval.chi);
        let mut misfit = 0.0;
        for ((y, p), m) in eval.states.iter().zip(&adj).zip(self.measurements) {
            let rhs = material_rhs(self.mesh, &coeffs, y.values(), v, m.f.values());
            misfit += math::dot_slices(p.values(), &rhs);
        }
        misfit /= self.measurements.len() as f64;
        let mut per = 0.0;
        for l in inc.loops() {
            let n = l.len();
            for i in 0..n {
                let (a, b) = (l[i], l[(i + 1) % n]);
                let (va, vb) = (self.interpolate(v, a)?, self.interpolate(v, b)?);
                let e = math::sub(b, a);
                per += math::dot(e, math::sub(vb, va)) / math::norm(e);
            }
        }
        Ok(misfit + self.params.perimeter_weight() * per)
    }

    fn interpolate(&self, v: &[Point], p: Point) -> Result<Point> {
        let loc = self.locator.locate(p)?;
        let tri = self.mesh.triangles()[loc.triangle];
        let mut out = [0.0; 2];
        for j in 0..3 {
            out = math::add(out, math::scale(v[tri[j]], loc.bary[j]));
        }
        Ok(out)
    }
}

/// Steepest-descent field of the sharp cost at `inc`.
pub fn shape_gradient(
    mesh: &TriMesh,
    inc: &PolygonInclusion,
    measurements: &[Measurement],
    params: SharpParams,
) -> Result<ShapeGradient> {
    let obj = SharpObjective::new(mesh, measurements, params)?;
    let eval = obj.evaluate(inc, None)?;
    obj.gradient(inc, &eval)
}

fn check_deformation(mesh: &TriMesh, v: &[Point]) -> Result<()> {
    if v.len() != mesh.num_vertices() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_vertices(),
            found: v.len(),
        });
    }
    if mesh.boundary_vertices().iter().any(|&b| v[b] != [0.0, 0.0]) {
        return Err(invalid("deformation field must vanish on the domain boundary"));
    }
    Ok(())
}

/// Nodal interpolant of a vector field.
pub fn deformation_field(mesh: &TriMesh, w: impl Fn(Point) -> Point) -> Vec<Point> {
    mesh.vertices().iter().map(|&p| w(p)).collect()
}

/// `(1 - x^2/r^2)^2 (1 - y^2/r^2)^2` on `|x|, |y| < r`, zero elsewhere.
pub fn bump(p: Point, r: f64) -> f64 {
    if p[0].abs() >= r || p[1].abs() >= r {
        return 0.0;
    }
    let (a, b) = (1.0 - p[0] * p[0] / (r * r), 1.0 - p[1] * p[1] / (r * r));
    a * a * b * b
}

/// Elementwise divergence and Jacobian `DV` (rows: components of `v`).
fn element_jacobians(mesh: &TriMesh, v: &[Point]) -> Vec<[[f64; 2]; 2]> {
    let vx: Vec<f64> = v.iter().map(|p| p[0]).collect();
    let vy: Vec<f64> = v.iter().map(|p| p[1]).collect();
    (0..mesh.num_triangles())
        .map(|t| [element_gradient(mesh, t, &vx), element_gradient(mesh, t, &vy)])
        .collect()
}

/// Area-weighted mean of the element gradients around each vertex; exact
/// for affine fields.
pub fn recovered_gradient(mesh: &TriMesh, f: &[f64]) -> Vec<Point> {
    let mut g = vec![[0.0; 2]; mesh.num_vertices()];
    let mut w = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let gt = math::scale(element_gradient(mesh, t, f), mesh.area(t));
        for &i in tri {
            g[i] = math::add(g[i], gt);
            w[i] += mesh.area(t);
        }
    }
    g.iter().zip(&w).map(|(gi, wi)| math::scale(*gi, 1.0 / wi)).collect()
}

/// `-d/dt F_t(y)` at `t = 0` for the discrete direct problem on the mesh
/// moved by `x + tV`, with the coefficients carried by the elements and the
/// source evaluated at the moved nodes:
/// `-int a (A grad y) . grad phi - int b y^3 phi div V + int div(f V) phi`,
/// `A = div V I - (DV + DV^T)`.
pub fn material_rhs(mesh: &TriMesh, coeffs: &CoefficientPair, y: &[f64], v: &[Point], f: &[f64]) -> Vec<f64> {
    let jac = element_jacobians(mesh, v);
    let grad_f = recovered_gradient(mesh, f);
    let f_dot: Vec<f64> = grad_f.iter().zip(v).map(|(g, w)| math::dot(*g, *w)).collect();
    let mut out = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let d = jac[t];
        let div = d[0][0] + d[1][1];
        let geo = mesh.geometry(t);
        let area = geo.area;
        let gy = element_gradient(mesh, t, y);
        // A grad y with A symmetric
        let ay = [
            div * gy[0] - 2.0 * d[0][0] * gy[0] - (d[0][1] + d[1][0]) * gy[1],
            div * gy[1] - (d[0][1] + d[1][0]) * gy[0] - 2.0 * d[1][1] * gy[1],
        ];
        let yq = at_quad_points(tri, y);
        let fq = at_quad_points(tri, f);
        let fdq = at_quad_points(tri, &f_dot);
        for (i, &vi) in tri.iter().enumerate() {
            let mut s = -coeffs.a_of_u[t] * area * math::dot(ay, geo.grads[i]);
            for (q, l) in QUAD_POINTS.iter().enumerate() {
                let w = area * QUAD_WEIGHT * l[i];
                s += w * (-coeffs.b_of_u[t] * yq[q] * yq[q] * yq[q] * div + fq[q] * div + fdq[q]);
            }
            out[vi] += s;
        }
    }
    out
}

/// Material derivative `S'` of the state under the deformation `v`.
pub fn material_derivative_with(
    mesh: &TriMesh,
    coeffs: &CoefficientPair,
    y: &[f64],
    v: &[Point],
    f: &[f64],
) -> Result<NodalField> {
    check_deformation(mesh, v)?;
    let op = state_operator(mesh, coeffs, y)?;
    let rhs = material_rhs(mesh, coeffs, y, v, f);
    NodalField::new(mesh, solve_on_mesh(mesh, &op, &rhs)?)
}

/// Material derivative for the phase field `u` (coefficients from centroid
/// means) with `y` the corresponding state.
pub fn solve_material_derivative(
    mesh: &TriMesh,
    u: &NodalField,
    y: &NodalField,
    v: &[Point],
    f: &NodalField,
    k: f64,
) -> Result<NodalField> {
    u.check(mesh)?;
    y.check(mesh)?;
    f.check(mesh)?;
    material_derivative_with(mesh, &CoefficientPair::from_field(mesh, u.values(), k), y.values(), v, f.values())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelaxedDerivative {
    pub misfit: f64,
    pub gl_gradient: f64,
    pub gl_well: f64,
    pub total: f64,
}

/// Derivative of the discrete relaxed cost along the deformation `v` with
/// `u_eps` carried by the mesh:
/// `avg (y - y_meas)^T M_b S' + alpha eps int (div V |grad u|^2 - 2 DV grad u . grad u)
///  + (alpha/eps) int u (1 - u) div V`.
pub fn relaxed_directional_derivative(
    mesh: &TriMesh,
    u_eps: &NodalField,
    v: &[Point],
    measurements: &[Measurement],
    params: ObjectiveParams,
) -> Result<RelaxedDerivative> {
    params.validate()?;
    u_eps.check(mesh)?;
    check_deformation(mesh, v)?;
    if measurements.is_empty() {
        return Err(invalid("at least one measurement is required"));
    }
    let u = u_eps.values();
    let coeffs = CoefficientPair::from_field(mesh, u, params.k);
    let bm = assemble_boundary_mass(mesh);
    let mut misfit = 0.0;
    for m in measurements {
        let y = ForwardProblem::new(mesh, coeffs.clone(), m.f.values())?.solve(None, params.newton_tol)?.y;
        let s = material_derivative_with(mesh, &coeffs, y.values(), v, m.f.values())?;
        let d: Vec<f64> = y.values().iter().zip(m.y_meas.values()).map(|(a, b)| a - b).collect();
        misfit += bm.bilinear(&d, s.values());
    }
    misfit /= measurements.len() as f64;

    let jac = element_jacobians(mesh, v);
    let mut grad = 0.0;
    for (t, d) in jac.iter().enumerate() {
        let div = d[0][0] + d[1][1];
        let gu = element_gradient(mesh, t, u);
        let dvg = [d[0][0] * gu[0] + d[0][1] * gu[1], d[1][0] * gu[0] + d[1][1] * gu[1]];
        grad += mesh.area(t) * (div * math::dot(gu, gu) - 2.0 * math::dot(dvg, gu));
    }
    let mdiv = assemble_quad_mass(mesh, |t, _| jac[t][0][0] + jac[t][1][1]);
    let mu = mdiv.mul_vec(u);
    let well: f64 = mu.iter().zip(u).map(|(m, x)| m - m * x).sum();
    let gl_gradient = params.alpha * params.eps * grad;
    let gl_well = params.alpha / params.eps * well;
    Ok(RelaxedDerivative {
        misfit,
        gl_gradient,
        gl_well,
        total: misfit + gl_gradient + gl_well,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    pub sharp: SharpParams,
    /// First trial step of every backtracking search, in units of `spacing`
    /// for the largest boundary displacement.
    pub max_step: f64,
    /// Stop when the relative cost decrease of an accepted step falls below.
    pub tol: f64,
    pub min_step: f64,
    pub max_iters: usize,
    /// Target distance between boundary points after each move.
    pub spacing: f64,
    pub lo: Point,
    pub hi: Point,
    pub d0: f64,
}

impl ShapeParams {
    pub fn new(sharp: SharpParams, spacing: f64) -> Self {
        ShapeParams {
            sharp,
            max_step: 10.0,
            tol: 1e-6,
            min_step: 1e-6,
            max_iters: 500,
            spacing,
            lo: [-1.0, -1.0],
            hi: [1.0, 1.0],
            d0: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sharp.validate()?;
        if !(self.max_step > 0.0 && self.min_step > 0.0 && self.min_step <= self.max_step) {
            return Err(invalid("steps must satisfy 0 < min_step <= max_step"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        if !(self.spacing > 0.0) {
            return Err(invalid("spacing must be positive"));
        }
        if !(self.d0 >= 0.0) {
            return Err(invalid("d0 must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeStatus {
    Converged,
    StepUnderflow,
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeTraceRow {
    pub iter: usize,
    pub cost: SharpCost,
    pub step: f64,
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct ShapeResult {
    pub inclusion: PolygonInclusion,
    pub evaluation: SharpEvaluation,
    pub trace: Vec<ShapeTraceRow>,
    pub status: ShapeStatus,
    pub rejected_steps: usize,
}

/// Callback for accepted iterates.
pub trait ShapeObserver {
    fn accepted(&mut self, inclusion: &PolygonInclusion, row: &ShapeTraceRow);
}

impl ShapeObserver for () {
    fn accepted(&mut self, _: &PolygonInclusion, _: &ShapeTraceRow) {}
}

pub fn run_shape_descent(
    params: &ShapeParams,
    mesh: &TriMesh,
    inc0: PolygonInclusion,
    measurements: &[Measurement],
) -> Result<ShapeResult> {
    run_shape_descent_with(params, mesh, inc0, measurements, &mut ())
}

/// Gradient descent on the boundary points with backtracking: each trial
/// moves the points by `step * spacing * V / max|V|`, resamples, and is
/// accepted if the polygon stays simple, inside the collar, and lowers the
/// cost.
pub fn run_shape_descent_with(
    params: &ShapeParams,
    mesh: &TriMesh,
    inc0: PolygonInclusion,
    measurements: &[Measurement],
    observer: &mut dyn ShapeObserver,
) -> Result<ShapeResult> {
    params.validate()?;
    let admissible = |inc: &PolygonInclusion| inc.collar_distance(params.lo, params.hi) >= params.d0;
    if !admissible(&inc0) {
        return Err(Error::Geometry("initial inclusion violates the collar".into()));
    }
    let obj = SharpObjective::new(mesh, measurements, params.sharp)?;
    let mut inc = inc0;
    let mut eval = obj.evaluate(&inc, None)?;
    let mut trace = vec![ShapeTraceRow {
        iter: 0,
        cost: eval.cost,
        step: 0.0,
        points: inc.num_points(),
    }];
    observer.accepted(&inc, &trace[0]);
    let mut rejected = 0;
    for iter in 1..=params.max_iters {
        let grad = obj.gradient(&inc, &eval)?;
        let vmax = grad.velocity.max_norm();
        if !(vmax > 0.0) {
            return Ok(ShapeResult { inclusion: inc, evaluation: eval, trace, status: ShapeStatus::Converged, rejected_steps: rejected });
        }
        let dir = grad.velocity.scaled(params.spacing / vmax);
        let mut step = params.max_step;
        let mut next = None;
        while step >= params.min_step {
            let trial = inc
                .moved(&dir, step)
                .and_then(|l| PolygonInclusion::new(l))
                .and_then(|p| p.resampled(params.spacing));
            if let Ok(trial) = trial {
                if admissible(&trial) {
                    if let Ok(e) = obj.evaluate(&trial, Some(&eval.states)) {
                        if e.cost.total < eval.cost.total {
                            next = Some((trial, e));
                            break;
                        }
                    }
                }
            }
            rejected += 1;
            step *= 0.5;
        }
        let Some((trial, e)) = next else {
            return Ok(ShapeResult { inclusion: inc, evaluation: eval, trace, status: ShapeStatus::StepUnderflow, rejected_steps: rejected });
        };
        let decrease = (eval.cost.total - e.cost.total) / eval.cost.total.abs().max(f64::MIN_POSITIVE);
        inc = trial;
        eval = e;
        let row = ShapeTraceRow {
            iter,
            cost: eval.cost,
            step,
            points: inc.num_points(),
        };
        trace.push(row);
        observer.accepted(&inc, &row);
        if decrease < params.tol {
            return Ok(ShapeResult { inclusion: inc, evaluation: eval, trace, status: ShapeStatus::Converged, rejected_steps: rejected });
        }
    }
    Ok(ShapeResult { inclusion: inc, evaluation: eval, trace, status: ShapeStatus::IterationCap, rejected_steps: rejected })
}
