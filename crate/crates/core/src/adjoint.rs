//! Adjoint state for the boundary misfit.

use alloc::vec::Vec;

use crate::error::Result;
use crate::fem::{assemble_boundary_mass, assemble_stiffness, cubic_jacobian, CoefficientPair, NodalField};
use crate::forward::ForwardSolution;
use crate::math;
use crate::mesh::TriMesh;
use crate::cholesky::{solve_cached, Cholesky};
use crate::sparse::CsrMatrix;

/// Relative residual of adjoint solves that reuse a nearby factorization.
pub const CACHED_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    pub p: NodalField,
    pub residual: f64,
}

/// Linearized operator `int a grad v . grad w + int 3 b y^2 v w`, shared by
/// the adjoint, linearized and material-derivative problems.
pub fn state_operator(mesh: &TriMesh, coeffs: &CoefficientPair, y: &[f64]) -> Result<CsrMatrix> {
    assemble_stiffness(mesh, &coeffs.a_of_u)?.add_scaled(1.0, &cubic_jacobian(mesh, &coeffs.b_of_u, y))
}

/// Solves `A p = M_b (y - y_meas)` where `M_b` is the boundary mass matrix and
/// `y_meas` matters only on boundary vertices.
pub fn solve_adjoint_with(
    mesh: &TriMesh,
    coeffs: &CoefficientPair,
    y: &[f64],
    y_meas: &[f64],
    boundary_mass: &CsrMatrix,
) -> Result<AdjointSolution> {
    solve_adjoint_cached(mesh, coeffs, y, y_meas, boundary_mass, &mut None)
}

/// As [`solve_adjoint_with`], reusing the factorization held in `slot`.
pub fn solve_adjoint_cached(
    mesh: &TriMesh,
    coeffs: &CoefficientPair,
    y: &[f64],
    y_meas: &[f64],
    boundary_mass: &CsrMatrix,
    slot: &mut Option<Cholesky>,
) -> Result<AdjointSolution> {
    let op = state_operator(mesh, coeffs, y)?;
    let misfit: Vec<f64> = y.iter().zip(y_meas).map(|(a, b)| a - b).collect();
    let rhs = boundary_mass.mul_vec(&misfit);
    let x = solve_cached(mesh, &op, &rhs, CACHED_TOL, slot)?;
    let ax = op.mul_vec(&x);
    let res = math::norm2(&rhs.iter().zip(&ax).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(AdjointSolution {
        p: NodalField::new(mesh, x)?,
        residual: res,
    })
}

pub fn solve_adjoint(
    mesh: &TriMesh,
    u: &NodalField,
    y: &ForwardSolution,
    y_meas: &NodalField,
    k: f64,
) -> Result<AdjointSolution> {
    u.check(mesh)?;
    y.y.check(mesh)?;
    y_meas.check(mesh)?;
    let coeffs = CoefficientPair::from_field(mesh, u.values(), k);
    solve_adjoint_with(mesh, &coeffs, y.y.values(), y_meas.values(), &assemble_boundary_mass(mesh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_mass, interpolate_nodal};
    use crate::forward::{linearized_load, solve_direct, solve_linearized};
    use crate::mesh::build_square_mesh;
    use crate::sparse::solve_spd;
    use alloc::vec;

    #[test]
    fn exact_trace_gives_zero_adjoint() {
        let m = build_square_mesh(0.25).unwrap();
        let u = interpolate_nodal(&m, |p| if math::norm(p) < 0.4 { 1.0 } else { 0.0 }).unwrap();
        let f = interpolate_nodal(&m, |p| p[0]).unwrap();
        let y = solve_direct(&m, &u, &f, 0.1, 1e-12).unwrap();
        let adj = solve_adjoint(&m, &u, &y, &y.y, 0.1).unwrap();
        assert!(adj.p.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_state_matches_independent_assembly() {
        let m = build_square_mesh(0.25).unwrap();
        let u = NodalField::zeros(&m);
        let y = solve_direct(&m, &u, &NodalField::constant(&m, 1.0), 0.1, 1e-13).unwrap();
        let adj = solve_adjoint(&m, &u, &y, &NodalField::zeros(&m), 0.1).unwrap();
        let ones = vec![1.0; m.num_triangles()];
        let a = assemble_stiffness(&m, &ones)
            .unwrap()
            .add_scaled(3.0, &assemble_mass(&m, &ones, false).unwrap())
            .unwrap();
        // int_{boundary} psi_i = half the length of the two incident edges
        let mut rhs = vec![0.0; m.num_vertices()];
        for e in m.boundary_edges() {
            let l = math::dist(m.vertices()[e[0]], m.vertices()[e[1]]);
            rhs[e[0]] += 0.5 * l;
            rhs[e[1]] += 0.5 * l;
        }
        let oracle = solve_spd(&a, &rhs, 1e-14).unwrap();
        for i in 0..rhs.len() {
            assert!((oracle[i] - adj.p.values()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_identity_and_linearity() {
        let m = build_square_mesh(0.2).unwrap();
        let u = interpolate_nodal(&m, |p| 0.5 * libm::exp(-4.0 * math::dot(p, p))).unwrap();
        let f = interpolate_nodal(&m, |p| p[1]).unwrap();
        let k = 0.1;
        let y = solve_direct(&m, &u, &f, k, 1e-13).unwrap();
        let meas = interpolate_nodal(&m, |p| 0.1 * p[0] * p[1]).unwrap();
        let adj = solve_adjoint(&m, &u, &y, &meas, k).unwrap();
        let mb = assemble_boundary_mass(&m);
        let misfit: Vec<f64> = y.y.values().iter().zip(meas.values()).map(|(a, b)| a - b).collect();
        for s in 0..20u32 {
            let theta = interpolate_nodal(&m, |p| libm::sin(1.0 + s as f64 * p[0] + 0.3 * s as f64 * p[1] * p[1])).unwrap();
            let sdot = solve_linearized(&m, &u, &y, &theta, k).unwrap();
            let lhs = mb.bilinear(&misfit, sdot.values());
            let rhs = math::dot_slices(&linearized_load(&m, y.y.values(), theta.values(), k), adj.p.values());
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
        }
        // doubling the misfit doubles p
        let meas2: Vec<f64> = y.y.values().iter().zip(&misfit).map(|(a, d)| a - 2.0 * d).collect();
        let coeffs = CoefficientPair::from_field(&m, u.values(), k);
        let adj2 = solve_adjoint_with(&m, &coeffs, y.y.values(), &meas2, &mb).unwrap();
        let scale = math::norm_inf(adj.p.values());
        for i in 0..m.num_vertices() {
            assert!((adj2.p.values()[i] - 2.0 * adj.p.values()[i]).abs() <= 1e-12 * scale.max(1.0));
        }
    }
}
