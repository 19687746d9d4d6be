//! The relaxed cost `J_eps(u) = J_pde(u) + alpha (eps int |grad u|^2 +
//! (1/eps) int u (1 - u))` and its derivative.
//!
//! With several measurements the misfit is averaged. All integrals use the
//! assembled P1 operators, so the gradient is the exact derivative of the
//! discrete functional.

use alloc::vec;
use alloc::vec::Vec;

use core::cell::RefCell;

use crate::adjoint::solve_adjoint_cached;
use crate::cholesky::Cholesky;
use crate::error::{invalid, Result};
use crate::fem::{
    at_quad_points, element_gradient, CoefficientPair, NodalField, Norms,
    QUAD_POINTS, QUAD_WEIGHT,
};
use crate::forward::{ForwardProblem, DEFAULT_NEWTON_TOL};
use crate::math;
use crate::mesh::TriMesh;
use crate::sparse::CsrMatrix;

/// One source term together with its boundary datum. Only the boundary
/// values of `y_meas` enter the cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub f: NodalField,
    pub y_meas: NodalField,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParams {
    pub alpha: f64,
    pub eps: f64,
    pub k: f64,
    pub newton_tol: f64,
}

impl ObjectiveParams {
    pub fn new(alpha: f64, eps: f64, k: f64) -> Self {
        ObjectiveParams {
            alpha,
            eps,
            k,
            newton_tol: DEFAULT_NEWTON_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha must be non-negative"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(invalid("eps must be positive"));
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(invalid("k must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub j_pde: f64,
    pub j_gl_gradient: f64,
    pub j_gl_well: f64,
    pub total: f64,
    pub tv_diag: f64,
}

/// Cost of `u` plus the forward states it was computed from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: CostBreakdown,
    pub states: Vec<NodalField>,
}

/// Cached operators for evaluating the relaxed cost on one mesh.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub mesh: &'a TriMesh,
    pub measurements: &'a [Measurement],
    pub params: ObjectiveParams,
    pub norms: Norms,
    pub lumped_mass: Vec<f64>,
    /// Last factorization of the state operator per measurement.
    factors: RefCell<Vec<Option<Cholesky>>>,
}

impl<'a> Objective<'a> {
    pub fn new(mesh: &'a TriMesh, measurements: &'a [Measurement], params: ObjectiveParams) -> Result<Self> {
        params.validate()?;
        if measurements.is_empty() {
            return Err(invalid("at least one measurement is required"));
        }
        for m in measurements {
            m.f.check(mesh)?;
            m.y_meas.check(mesh)?;
        }
        let norms = Norms::new(mesh);
        let lumped_mass = norms.mass.row_sums();
        Ok(Objective {
            mesh,
            measurements,
            params,
            norms,
            lumped_mass,
            factors: RefCell::new(vec![None; measurements.len()]),
        })
    }

    pub fn boundary_mass(&self) -> &CsrMatrix {
        &self.norms.boundary_mass
    }

    fn check_u(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.mesh.num_vertices() {
            return Err(crate::Error::DimensionMismatch {
                expected: self.mesh.num_vertices(),
                found: u.len(),
            });
        }
        if !u.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(invalid("u must lie in [0, 1] at every vertex"));
        }
        Ok(())
    }

    /// `(alpha eps u^T K u, (alpha/eps)(1^T M u - u^T M u))`
    pub fn gl_parts(&self, u: &[f64]) -> (f64, f64) {
        let ObjectiveParams { alpha, eps, .. } = self.params;
        let grad = alpha * eps * self.norms.stiffness.bilinear(u, u);
        let mu = self.norms.mass.mul_vec(u);
        let well: f64 = mu.iter().zip(u).map(|(m, x)| m - m * x).sum();
        (grad, alpha / eps * well)
    }

    /// Gradient of the Ginzburg-Landau part: `2 alpha eps K u + (alpha/eps) M (1 - 2u)`.
    pub fn gl_gradient(&self, u: &[f64]) -> Vec<f64> {
        let ObjectiveParams { alpha, eps, .. } = self.params;
        let ku = self.norms.stiffness.mul_vec(u);
        let w: Vec<f64> = u.iter().map(|x| 1.0 - 2.0 * x).collect();
        let mw = self.norms.mass.mul_vec(&w);
        ku.iter()
            .zip(&mw)
            .map(|(k, m)| 2.0 * alpha * eps * k + alpha / eps * m)
            .collect()
    }

    /// Forward solves for every measurement, optionally warm started.
    pub fn states(&self, u: &[f64], warm: Option<&[NodalField]>) -> Result<Vec<NodalField>> {
        let coeffs = CoefficientPair::from_field(self.mesh, u, self.params.k);
        let mut out = Vec::with_capacity(self.measurements.len());
        let mut factors = self.factors.borrow_mut();
        for (i, m) in self.measurements.iter().enumerate() {
            let problem = ForwardProblem::new(self.mesh, coeffs.clone(), m.f.values())?;
            let y0 = warm.and_then(|w| w.get(i)).map(|y| y.values());
            out.push(problem.solve_cached(y0, self.params.newton_tol, &mut factors[i])?.y);
        }
        Ok(out)
    }

    /// Averaged `1/2 (y - y_meas)^T M_b (y - y_meas)`.
    pub fn misfit(&self, states: &[NodalField]) -> f64 {
        let mut total = 0.0;
        for (y, m) in states.iter().zip(self.measurements) {
            let d: Vec<f64> = y.values().iter().zip(m.y_meas.values()).map(|(a, b)| a - b).collect();
            total += 0.5 * self.norms.boundary_mass.bilinear(&d, &d);
        }
        total / self.measurements.len() as f64
    }

    pub fn cost_from_states(&self, u: &[f64], states: &[NodalField]) -> CostBreakdown {
        let j_pde = self.misfit(states);
        let (j_gl_gradient, j_gl_well) = self.gl_parts(u);
        CostBreakdown {
            j_pde,
            j_gl_gradient,
            j_gl_well,
            total: j_pde + j_gl_gradient + j_gl_well,
            tv_diag: tv_values(self.mesh, u),
        }
    }

    pub fn evaluate(&self, u: &[f64], warm: Option<&[NodalField]>) -> Result<Evaluation> {
        self.check_u(u)?;
        let states = self.states(u, warm)?;
        Ok(Evaluation {
            cost: self.cost_from_states(u, &states),
            states,
        })
    }

    /// Adjoint states for the given forward states.
    pub fn adjoints(&self, u: &[f64], states: &[NodalField]) -> Result<Vec<NodalField>> {
        let coeffs = CoefficientPair::from_field(self.mesh, u, self.params.k);
        let mut factors = self.factors.borrow_mut();
        states
            .iter()
            .zip(self.measurements)
            .zip(factors.iter_mut())
            .map(|((y, m), slot)| {
                solve_adjoint_cached(
                    self.mesh,
                    &coeffs,
                    y.values(),
                    m.y_meas.values(),
                    &self.norms.boundary_mass,
                    slot,
                )
                .map(|a| a.p)
            })
            .collect()
    }

    /// Averaged misfit part of the gradient:
    /// `sum_K 1/3 [(1-k) |K| grad y . grad p + int_K y^3 p]` at each vertex of `K`.
    pub fn pde_gradient(&self, u: &[f64], states: &[NodalField]) -> Result<Vec<f64>> {
        let adj = self.adjoints(u, states)?;
        let mut g = vec![0.0; self.mesh.num_vertices()];
        let k = self.params.k;
        let scale = 1.0 / self.measurements.len() as f64;
        for (y, p) in states.iter().zip(&adj) {
            let (y, p) = (y.values(), p.values());
            for (t, tri) in self.mesh.triangles().iter().enumerate() {
                let area = self.mesh.area(t);
                let gy = element_gradient(self.mesh, t, y);
                let gp = element_gradient(self.mesh, t, p);
                let yq = at_quad_points(tri, y);
                let pq = at_quad_points(tri, p);
                let mut v = (1.0 - k) * area * math::dot(gy, gp);
                for q in 0..QUAD_POINTS.len() {
                    v += area * QUAD_WEIGHT * yq[q] * yq[q] * yq[q] * pq[q];
                }
                let share = scale * v / 3.0;
                for &i in tri {
                    g[i] += share;
                }
            }
        }
        Ok(g)
    }

    /// Full derivative vector: entry `i` is `J'_eps(u)[phi_i]`.
    pub fn gradient(&self, u: &[f64], states: &[NodalField]) -> Result<Vec<f64>> {
        let mut g = self.pde_gradient(u, states)?;
        for (gi, li) in g.iter_mut().zip(self.gl_gradient(u)) {
            *gi += li;
        }
        Ok(g)
    }
}

/// `sum_K |K| |grad u|_K`
pub fn tv_values(mesh: &TriMesh, u: &[f64]) -> f64 {
    (0..mesh.num_triangles())
        .map(|t| mesh.area(t) * math::norm(element_gradient(mesh, t, u)))
        .sum()
}

pub fn tv_diagnostic(mesh: &TriMesh, u: &NodalField) -> Result<f64> {
    u.check(mesh)?;
    Ok(tv_values(mesh, u.values()))
}

pub fn eval_cost(
    mesh: &TriMesh,
    u: &NodalField,
    measurements: &[Measurement],
    alpha: f64,
    eps: f64,
    k: f64,
) -> Result<CostBreakdown> {
    u.check(mesh)?;
    let obj = Objective::new(mesh, measurements, ObjectiveParams::new(alpha, eps, k))?;
    Ok(obj.evaluate(u.values(), None)?.cost)
}

pub fn eval_gradient(
    mesh: &TriMesh,
    u: &NodalField,
    measurements: &[Measurement],
    alpha: f64,
    eps: f64,
    k: f64,
) -> Result<Vec<f64>> {
    u.check(mesh)?;
    let obj = Objective::new(mesh, measurements, ObjectiveParams::new(alpha, eps, k))?;
    let ev = obj.evaluate(u.values(), None)?;
    obj.gradient(u.values(), &ev.states)
}

/// Boundary datum of the state `y`: its values on boundary vertices, zero
/// elsewhere.
pub fn boundary_trace(mesh: &TriMesh, y: &NodalField) -> Result<NodalField> {
    y.check(mesh)?;
    let vals = (0..mesh.num_vertices())
        .map(|v| if mesh.is_boundary_vertex(v) { y.values()[v] } else { 0.0 })
        .collect();
    NodalField::new(mesh, vals)
}

/// Measurements whose data are the exact discrete traces for `u`.
pub fn exact_measurements(mesh: &TriMesh, u: &NodalField, sources: &[NodalField], k: f64) -> Result<Vec<Measurement>> {
    sources
        .iter()
        .map(|f| {
            let y = crate::forward::solve_direct(mesh, u, f, k, DEFAULT_NEWTON_TOL)?;
            Ok(Measurement {
                f: f.clone(),
                y_meas: boundary_trace(mesh, &y.y)?,
            })
        })
        .collect()
}
