//! The semilinear direct problem
//! `int a(u) grad y . grad phi + int b(u) y^3 phi = int f phi`,
//! its linearization in `u` and the solvability diagnostics for the source.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::fem::{
    assemble_mass, assemble_stiffness, at_quad_points, centroid_values, cubic_jacobian,
    cubic_term, element_gradient, load_vector, CoefficientPair, NodalField, QUAD_POINTS,
    QUAD_WEIGHT,
};
use crate::math;
use crate::mesh::TriMesh;
use crate::cholesky::{solve_cached, solve_on_mesh, Cholesky};
use crate::sparse::CsrMatrix;

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const MAX_NEWTON_ITERS: usize = 50;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSolution {
    pub y: NodalField,
    pub newton_iters: usize,
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
}

/// Assembled pieces of the direct problem for fixed coefficients and source.
#[derive(Debug, Clone)]
pub struct ForwardProblem<'a> {
    pub mesh: &'a TriMesh,
    pub coeffs: CoefficientPair,
    pub stiffness: CsrMatrix,
    pub load: Vec<f64>,
    b_mass: CsrMatrix,
}

impl<'a> ForwardProblem<'a> {
    pub fn new(mesh: &'a TriMesh, coeffs: CoefficientPair, f: &[f64]) -> Result<Self> {
        if f.len() != mesh.num_vertices() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_vertices(),
                found: f.len(),
            });
        }
        if !(coeffs.k > 0.0 && coeffs.k < 1.0) {
            return Err(invalid(format!("contrast k must lie in (0, 1), got {}", coeffs.k)));
        }
        if coeffs.b_of_u.iter().all(|&b| b <= 0.0) {
            return Err(invalid("u is identically one, the direct problem is not coercive"));
        }
        let stiffness = assemble_stiffness(mesh, &coeffs.a_of_u)?;
        let b_mass = assemble_mass(mesh, &coeffs.b_of_u, false)?;
        Ok(ForwardProblem {
            mesh,
            stiffness,
            load: load_vector(mesh, f),
            b_mass,
            coeffs,
        })
    }

    /// Coefficients from a nodal phase field `u` in `[0, 1]`.
    pub fn from_field(mesh: &'a TriMesh, u: &NodalField, f: &NodalField, k: f64) -> Result<Self> {
        u.check(mesh)?;
        f.check(mesh)?;
        if !u.in_unit_box() {
            return Err(invalid("u must lie in [0, 1] at every vertex"));
        }
        Self::new(mesh, CoefficientPair::from_field(mesh, u.values(), k), f.values())
    }

    pub fn residual(&self, y: &[f64]) -> Vec<f64> {
        let mut r = self.stiffness.mul_vec(y);
        let n = cubic_term(self.mesh, &self.coeffs.b_of_u, y);
        for i in 0..r.len() {
            r[i] += n[i] - self.load[i];
        }
        r
    }

    /// Exact Jacobian `K_a + N'(y)`.
    pub fn jacobian(&self, y: &[f64]) -> CsrMatrix {
        self.stiffness
            .add_scaled(1.0, &cubic_jacobian(self.mesh, &self.coeffs.b_of_u, y))
            .expect("shared pattern")
    }

    /// Size of the rounding error in evaluating the residual at `y`.
    fn roundoff_floor(&self, y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..y.len() {
            let mut s = self.load[i].abs();
            for (j, v) in self.stiffness.row(i) {
                s += (v * y[j]).abs();
            }
            acc += s * s;
        }
        let n = cubic_term(self.mesh, &self.coeffs.b_of_u, &y.iter().map(|v| v.abs()).collect::<Vec<_>>());
        64.0 * f64::EPSILON * (math::sqrt(acc) + math::norm2(&n))
    }

    /// Damped Newton iteration from `y0` (zero when `None`) until
    /// `|F(y)| <= tol |M f|`, or the rounding floor of the residual.
    pub fn solve(&self, y0: Option<&[f64]>, tol: f64) -> Result<ForwardSolution> {
        self.solve_cached(y0, tol, &mut None)
    }

    /// As [`ForwardProblem::solve`], reusing and updating a factorization of a
    /// nearby Jacobian held in `slot`.
    pub fn solve_cached(&self, y0: Option<&[f64]>, tol: f64, slot: &mut Option<Cholesky>) -> Result<ForwardSolution> {
        let n = self.mesh.num_vertices();
        let mut y = match y0 {
            Some(y0) if y0.len() == n => y0.to_vec(),
            _ => vec![0.0; n],
        };
        let scale = math::norm2(&self.load).max(f64::MIN_POSITIVE);
        let mut r = self.residual(&y);
        let mut rn = math::norm2(&r);
        let mut history = vec![rn];
        let target = |y: &[f64]| (tol * scale).max(self.roundoff_floor(y));
        let mut iters = 0;
        while rn > target(&y) {
            if iters == MAX_NEWTON_ITERS {
                return Err(Error::NotConverged {
                    method: "newton",
                    iterations: iters,
                    residual: rn / scale,
                });
            }
            iters += 1;
            let rel = rn / scale;
            // a vanishing Levenberg shift keeps the Jacobian definite near y = 0
            let lambda = 3.0 * rel.min(1.0);
            let mut jac = self.jacobian(&y);
            if lambda > 0.0 {
                jac = jac.add_scaled(lambda, &self.b_mass).expect("shared pattern");
            }
            let step = solve_cached(self.mesh, &jac, &r, rel.clamp(1e-14, 1e-4), slot)?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = y.iter().zip(&step).map(|(a, d)| a - t * d).collect();
                let tr = self.residual(&trial);
                let tn = math::norm2(&tr);
                if tn < rn {
                    y = trial;
                    r = tr;
                    rn = tn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                if rn <= 1e3 * target(&y) {
                    break;
                }
                return Err(Error::NotConverged {
                    method: "newton",
                    iterations: iters,
                    residual: rn / scale,
                });
            }
            history.push(rn);
        }
        Ok(ForwardSolution {
            y: NodalField::new(self.mesh, y)?,
            newton_iters: iters,
            final_residual: rn,
            residual_history: history,
        })
    }
}

/// Solves the direct problem for the phase field `u` with Newton from zero.
pub fn solve_direct(
    mesh: &TriMesh,
    u: &NodalField,
    f: &NodalField,
    k: f64,
    tol: f64,
) -> Result<ForwardSolution> {
    ForwardProblem::from_field(mesh, u, f, k)?.solve(None, tol)
}

/// Right-hand side of the linearized problem in direction `theta`:
/// `int (1-k) theta grad y . grad phi_i + int theta y^3 phi_i`.
pub fn linearized_load(mesh: &TriMesh, y: &[f64], theta: &[f64], k: f64) -> Vec<f64> {
    let tbar = centroid_values(mesh, theta);
    let mut out = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if tbar[t] == 0.0 {
            continue;
        }
        let g = mesh.geometry(t);
        let gy = element_gradient(mesh, t, y);
        let c = (1.0 - k) * tbar[t] * g.area;
        let yq = at_quad_points(tri, y);
        let w = tbar[t] * g.area * QUAD_WEIGHT;
        for i in 0..3 {
            let mut v = c * math::dot(gy, g.grads[i]);
            for (q, l) in QUAD_POINTS.iter().enumerate() {
                v += w * yq[q] * yq[q] * yq[q] * l[i];
            }
            out[tri[i]] += v;
        }
    }
    out
}

/// Derivative `S'(u)[theta]` of the discrete solution map.
pub fn solve_linearized(
    mesh: &TriMesh,
    u: &NodalField,
    y: &ForwardSolution,
    theta: &NodalField,
    k: f64,
) -> Result<NodalField> {
    u.check(mesh)?;
    y.y.check(mesh)?;
    theta.check(mesh)?;
    let coeffs = CoefficientPair::from_field(mesh, u.values(), k);
    let jac = assemble_stiffness(mesh, &coeffs.a_of_u)?
        .add_scaled(1.0, &cubic_jacobian(mesh, &coeffs.b_of_u, y.y.values()))?;
    let rhs = linearized_load(mesh, y.y.values(), theta.values(), k);
    let x = solve_on_mesh(mesh, &jac, &rhs)?;
    NodalField::new(mesh, x)
}

/// Which solvability hypothesis on the source is met.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceDiagnostic {
    /// `int f != 0`.
    NonzeroMean { integral: f64 },
    /// `int f = 0`, but `u` vanishes on the collar of width `d0` and `f`
    /// vanishes on no collar element.
    CollarNonvanishing { integral: f64, d0: f64 },
    /// Neither hypothesis holds.
    Warning { integral: f64 },
}

impl SourceDiagnostic {
    pub fn holds(&self) -> bool {
        !matches!(self, SourceDiagnostic::Warning { .. })
    }
}

/// Distance from each vertex to the mesh boundary.
pub fn boundary_distance(mesh: &TriMesh) -> Vec<f64> {
    let v = mesh.vertices();
    let edges = mesh.boundary_edges();
    v.iter()
        .enumerate()
        .map(|(i, p)| {
            if mesh.is_boundary_vertex(i) {
                return 0.0;
            }
            edges
                .iter()
                .map(|e| segment_distance(*p, v[e[0]], v[e[1]]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn segment_distance(p: math::Point, a: math::Point, b: math::Point) -> f64 {
    let ab = math::sub(b, a);
    let l2 = math::dot(ab, ab);
    let t = if l2 > 0.0 {
        (math::dot(math::sub(p, a), ab) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    math::dist(p, math::add(a, math::scale(ab, t)))
}

pub fn check_source_assumption(
    mesh: &TriMesh,
    f: &NodalField,
    u: &NodalField,
    d0: f64,
) -> Result<SourceDiagnostic> {
    f.check(mesh)?;
    u.check(mesh)?;
    let fv = f.values();
    let integral: f64 = load_vector(mesh, fv).iter().sum();
    let abs_integral: f64 = load_vector(mesh, &fv.iter().map(|x| x.abs()).collect::<Vec<_>>())
        .iter()
        .sum();
    if integral.abs() > 1e-12 * abs_integral.max(f64::MIN_POSITIVE) && abs_integral > 0.0 {
        return Ok(SourceDiagnostic::NonzeroMean { integral });
    }
    let dist = boundary_distance(mesh);
    let fmax = math::norm_inf(fv);
    let zero = 1e-12 * fmax;
    let mut collar_elements = 0;
    let mut ok = fmax > 0.0;
    for tri in mesh.triangles() {
        if tri.iter().all(|&v| dist[v] < d0) {
            collar_elements += 1;
            if tri.iter().all(|&v| fv[v].abs() <= zero) {
                ok = false;
            }
            if tri.iter().any(|&v| u.values()[v] > 1e-12) {
                ok = false;
            }
        }
    }
    if ok && collar_elements > 0 {
        Ok(SourceDiagnostic::CollarNonvanishing { integral, d0 })
    } else {
        Ok(SourceDiagnostic::Warning { integral })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::interpolate_nodal;
    use crate::mesh::{build_square_mesh, refine, AdaptationMarking};
    use core::f64::consts::PI;

    #[test]
    fn constant_solutions() {
        let m = build_square_mesh(0.25).unwrap();
        let u = NodalField::zeros(&m);
        for (f, y) in [(1.0, 1.0), (8.0, 2.0)] {
            let sol = solve_direct(&m, &u, &NodalField::constant(&m, f), 0.1, 1e-13).unwrap();
            for v in sol.y.values() {
                assert!((v - y).abs() < 1e-10, "{v} vs {y}");
            }
        }
    }

    #[test]
    fn manufactured_solution_converges_quadratically() {
        let ystar = |p: [f64; 2]| libm::cos(PI * p[0]) * libm::cos(PI * p[1]);
        let mut mesh = build_square_mesh(0.125).unwrap();
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for _ in 0..3 {
            let f = interpolate_nodal(&mesh, |p| {
                let c = ystar(p);
                2.0 * PI * PI * c + c * c * c
            })
            .unwrap();
            let u = NodalField::zeros(&mesh);
            let sol = solve_direct(&mesh, &u, &f, 0.1, 1e-12).unwrap();
            errs.push(crate::fem::l2_error(&mesh, sol.y.values(), ystar));
            hs.push(mesh.h_max());
            let all = (0..mesh.num_triangles()).collect();
            mesh = refine(&mesh, &AdaptationMarking::refine_only(all)).unwrap();
        }
        let slope = math::loglog_slope(&hs, &errs);
        assert!(slope >= 1.9, "order {slope}, errors {errs:?}");
    }

    #[test]
    fn rejects_invalid_u() {
        let m = build_square_mesh(0.5).unwrap();
        let f = NodalField::constant(&m, 1.0);
        assert!(solve_direct(&m, &NodalField::constant(&m, 1.0), &f, 0.1, 1e-10).is_err());
        assert!(solve_direct(&m, &NodalField::constant(&m, 1.5), &f, 0.1, 1e-10).is_err());
        assert!(solve_direct(&m, &NodalField::zeros(&m), &f, 1.0, 1e-10).is_err());
    }

    #[test]
    fn linearized_with_zero_direction_vanishes() {
        let m = build_square_mesh(0.25).unwrap();
        let u = NodalField::zeros(&m);
        let f = interpolate_nodal(&m, |p| p[0]).unwrap();
        let y = solve_direct(&m, &u, &f, 0.1, 1e-12).unwrap();
        let s = solve_linearized(&m, &u, &y, &NodalField::zeros(&m), 0.1).unwrap();
        assert!(s.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linearized_at_unit_state_matches_independent_assembly() {
        // with y = 1 the right-hand side is int theta phi_i (centroid weighted)
        let m = build_square_mesh(0.25).unwrap();
        let u = NodalField::zeros(&m);
        let y = solve_direct(&m, &u, &NodalField::constant(&m, 1.0), 0.1, 1e-13).unwrap();
        let theta = interpolate_nodal(&m, |p| libm::sin(2.0 * p[0]) + p[1] * p[1]).unwrap();
        let s = solve_linearized(&m, &u, &y, &theta, 0.1).unwrap();
        let ones = vec![1.0; m.num_triangles()];
        let a = assemble_stiffness(&m, &ones)
            .unwrap()
            .add_scaled(3.0, &assemble_mass(&m, &ones, false).unwrap())
            .unwrap();
        let tbar = centroid_values(&m, theta.values());
        let mut rhs = vec![0.0; m.num_vertices()];
        for (t, tri) in m.triangles().iter().enumerate() {
            for &i in tri {
                rhs[i] += tbar[t] * m.area(t) / 3.0;
            }
        }
        let oracle = crate::sparse::solve_spd(&a, &rhs, 1e-14).unwrap();
        for i in 0..oracle.len() {
            assert!((oracle[i] - s.values()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn source_diagnostics() {
        let m = build_square_mesh(0.1).unwrap();
        let u0 = NodalField::zeros(&m);
        let one = NodalField::constant(&m, 1.0);
        assert!(matches!(
            check_source_assumption(&m, &one, &u0, 0.1).unwrap(),
            SourceDiagnostic::NonzeroMean { .. }
        ));
        let x = interpolate_nodal(&m, |p| p[0]).unwrap();
        let disc = interpolate_nodal(&m, |p| if math::norm(p) < 0.4 { 1.0 } else { 0.0 }).unwrap();
        assert!(matches!(
            check_source_assumption(&m, &x, &disc, 0.1).unwrap(),
            SourceDiagnostic::CollarNonvanishing { .. }
        ));
        let zero = NodalField::zeros(&m);
        assert!(!check_source_assumption(&m, &zero, &u0, 0.1).unwrap().holds());
    }
}
