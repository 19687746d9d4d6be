//! Derivative and solver verification harness.
//!
//! Every check returns a [`Check`] with the measured quantity and the bound
//! it was compared against, so reports can be printed or serialized by the
//! caller.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fem::{interpolate_nodal, l2_error, NodalField, Norms};
use crate::forward::{solve_direct, solve_linearized};
use crate::math::{self, Point};
use crate::mesh::{build_square_mesh, refine, AdaptationMarking, TriMesh};
use crate::objective::{exact_measurements, Measurement, Objective, ObjectiveParams};
use crate::pdas::{projected_gradient, solve_pdas, PdasProblem};
use crate::pop::{run_pop, FixedMeasurements, PopParams};
use crate::shape::{bump, deformation_field, optimal_profile, solve_material_derivative, PolygonInclusion};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Measured slope, error or count.
    pub value: f64,
    /// The bound `value` was compared against.
    pub bound: f64,
    pub detail: String,
}

impl Check {
    fn at_least(name: &'static str, value: f64, bound: f64, detail: String) -> Check {
        Check { name, passed: value >= bound, value, bound, detail }
    }

    fn at_most(name: &'static str, value: f64, bound: f64, detail: String) -> Check {
        Check { name, passed: value <= bound, value, bound, detail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Mesh size of the derivative checks.
    pub h: f64,
    /// Number of random `(u, theta)` pairs in the gradient Taylor test.
    pub pairs: usize,
    /// Perturb the computed gradient; the Taylor test must then fail.
    pub corrupt_gradient: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 1,
            h: 0.1,
            pairs: 5,
            corrupt_gradient: false,
        }
    }
}

/// Step sizes `1e-1 .. 1e-4` of the Taylor tests.
pub const TAYLOR_STEPS: [f64; 7] = [1e-1, 5e-2, 2e-2, 1e-2, 1e-3, 5e-4, 1e-4];

const K: f64 = 0.1;

/// Test problem: square mesh, sources `x` and `y`, data from a smooth disc.
pub struct Fixture {
    pub mesh: TriMesh,
    pub measurements: Vec<Measurement>,
    pub params: ObjectiveParams,
}

impl Fixture {
    pub fn new(h: f64) -> Result<Self> {
        let mesh = build_square_mesh(h)?;
        let truth = interpolate_nodal(&mesh, |p| optimal_profile((0.35 - math::dist(p, [0.1, 0.15])) / 0.1))?;
        let sources = vec![interpolate_nodal(&mesh, |p| p[0])?, interpolate_nodal(&mesh, |p| p[1])?];
        let measurements = exact_measurements(&mesh, &truth, &sources, K)?;
        let mut params = ObjectiveParams::new(1e-3, 0.1, K);
        params.newton_tol = 1e-14;
        Ok(Fixture { mesh, measurements, params })
    }

    /// Random `u` in `[0.2, 0.8]` and `theta` in `[-1, 1]`.
    pub fn random_pair(&self, rng: &mut ChaCha8Rng) -> Result<(NodalField, NodalField)> {
        let n = self.mesh.num_vertices();
        let u = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
        let t = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok((NodalField::new(&self.mesh, u)?, NodalField::new(&self.mesh, t)?))
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    parts.join(" ")
}

fn shifted(u: &[f64], theta: &[f64], s: f64) -> Vec<f64> {
    u.iter().zip(theta).map(|(a, b)| a + s * b).collect()
}

/// Central Taylor remainders `|J(u+s t) - J(u-s t) - 2 s J'(u) t|` for each
/// step; third order for a correct derivative, first order otherwise.
pub fn gradient_remainders(fx: &Fixture, u: &[f64], theta: &[f64], corrupt: bool) -> Result<Vec<f64>> {
    let obj = Objective::new(&fx.mesh, &fx.measurements, fx.params)?;
    let eval = obj.evaluate(u, None)?;
    let mut g = obj.gradient(u, &eval.states)?;
    if corrupt {
        g.iter_mut().for_each(|x| *x *= 1.5);
    }
    let dj = math::dot_slices(&g, theta);
    TAYLOR_STEPS
        .iter()
        .map(|&s| {
            let jp = obj.evaluate(&shifted(u, theta, s), Some(&eval.states))?.cost.total;
            let jm = obj.evaluate(&shifted(u, theta, -s), Some(&eval.states))?.cost.total;
            Ok((jp - jm - 2.0 * s * dj).abs())
        })
        .collect()
}

pub fn check_gradient_taylor(opts: &VerifyOptions) -> Result<Check> {
    let fx = Fixture::new(opts.h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = f64::INFINITY;
    let mut slopes = Vec::new();
    for _ in 0..opts.pairs {
        let (u, t) = fx.random_pair(&mut rng)?;
        let errs = gradient_remainders(&fx, u.values(), t.values(), opts.corrupt_gradient)?;
        let slope = math::loglog_slope(&TAYLOR_STEPS, &errs);
        slopes.push(slope);
        worst = worst.min(slope);
    }
    Ok(Check::at_least("gradient taylor slope", worst, 1.9, format!("slopes {slopes:.3?}")))
}

/// Misfit derivative along `theta` computed from the linearized states and
/// from the adjoint gradient; returns `(linearized, adjoint)`.
pub fn misfit_derivative_routes(fx: &Fixture, u: &NodalField, theta: &NodalField) -> Result<(f64, f64)> {
    let obj = Objective::new(&fx.mesh, &fx.measurements, fx.params)?;
    let mut direct = 0.0;
    for m in &fx.measurements {
        let y = solve_direct(&fx.mesh, u, &m.f, K, fx.params.newton_tol)?;
        let s = solve_linearized(&fx.mesh, u, &y, theta, K)?;
        let d: Vec<f64> = y.y.values().iter().zip(m.y_meas.values()).map(|(a, b)| a - b).collect();
        direct += obj.boundary_mass().bilinear(&d, s.values());
    }
    direct /= fx.measurements.len() as f64;
    let states = obj.states(u.values(), None)?;
    let adjoint = math::dot_slices(&obj.pde_gradient(u.values(), &states)?, theta.values());
    Ok((direct, adjoint))
}

pub fn check_adjoint_identity(opts: &VerifyOptions) -> Result<Check> {
    let fx = Fixture::new(opts.h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut worst: f64 = 0.0;
    for _ in 0..opts.pairs {
        let (u, t) = fx.random_pair(&mut rng)?;
        let (a, b) = misfit_derivative_routes(&fx, &u, &t)?;
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
    }
    Ok(Check::at_most("adjoint identity", worst, 1e-9, format!("worst relative gap over {} pairs", opts.pairs)))
}

/// `|S(u+s t) - S(u) - s S'(u) t|_{H1}` for each step.
pub fn linearized_remainders(fx: &Fixture, u: &NodalField, theta: &NodalField, f: &NodalField) -> Result<Vec<f64>> {
    let norms = Norms::new(&fx.mesh);
    let y = solve_direct(&fx.mesh, u, f, K, 1e-14)?;
    let s = solve_linearized(&fx.mesh, u, &y, theta, K)?;
    TAYLOR_STEPS
        .iter()
        .map(|&h| {
            let uh = NodalField::new(&fx.mesh, shifted(u.values(), theta.values(), h))?;
            let yh = solve_direct(&fx.mesh, &uh, f, K, 1e-14)?;
            let r: Vec<f64> = (0..fx.mesh.num_vertices())
                .map(|i| yh.y.values()[i] - y.y.values()[i] - h * s.values()[i])
                .collect();
            Ok(norms.h1(&r))
        })
        .collect()
}

pub fn check_linearized_order(opts: &VerifyOptions) -> Result<Check> {
    let fx = Fixture::new(opts.h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let (u, t) = fx.random_pair(&mut rng)?;
    let errs = linearized_remainders(&fx, &u, &t, &fx.measurements[0].f)?;
    let slope = math::loglog_slope(&TAYLOR_STEPS, &errs);
    Ok(Check::at_least("linearized forward slope", slope, 1.9, format!("remainders {}", sci(&errs))))
}

/// Deformation field of the material-derivative checks.
pub fn test_deformation(p: Point) -> Point {
    let b = bump(p, 0.9);
    [b * (0.5 + p[1]), -0.7 * b * p[0]]
}

/// `|S_t - S_0 - t S'|_{H1}` with `S_t` solved on the deformed mesh.
pub fn material_remainders(fx: &Fixture, steps: &[f64]) -> Result<Vec<f64>> {
    let m = &fx.mesh;
    let u = interpolate_nodal(m, |p| optimal_profile((0.35 - math::dist(p, [0.1, 0.0])) / 0.1))?;
    let src = |p: Point| 1.0 + p[0] - 0.5 * p[1];
    let f = interpolate_nodal(m, src)?;
    let y = solve_direct(m, &u, &f, K, 1e-14)?.y;
    let v = deformation_field(m, test_deformation);
    let s = solve_material_derivative(m, &u, &y, &v, &f, K)?;
    let norms = Norms::new(m);
    steps
        .iter()
        .map(|&t| {
            let mt = m.displaced(&v, t)?;
            let ft = interpolate_nodal(&mt, src)?;
            let yt = solve_direct(&mt, &u.rebind(&mt)?, &ft, K, 1e-14)?.y;
            let r: Vec<f64> = (0..m.num_vertices())
                .map(|i| yt.values()[i] - y.values()[i] - t * s.values()[i])
                .collect();
            Ok(norms.h1(&r))
        })
        .collect()
}

pub fn check_material_derivative(opts: &VerifyOptions) -> Result<Check> {
    let fx = Fixture::new(opts.h)?;
    let steps = [1e-1, 5e-2, 2e-2, 1e-2, 5e-3];
    let errs = material_remainders(&fx, &steps)?;
    let slope = math::loglog_slope(&steps, &errs);
    Ok(Check::at_least("material derivative slope", slope, 1.9, format!("remainders {}", sci(&errs))))
}

/// Box-constrained quadratic: positive diagonal plus a random graph
/// Laplacian, bounds `[0, 1]`.
pub fn random_box_qp(seed: u64, n: usize) -> PdasProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = rng.random_range(0.5..2.0);
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.15) {
                let w = rng.random_range(0.0..1.0);
                a[i][i] += w;
                a[j][j] += w;
                a[i][j] -= w;
                a[j][i] -= w;
            }
        }
    }
    let b = (0..n).map(|_| rng.random_range(-3.0..4.0)).collect();
    PdasProblem::unit_box(CsrMatrix::from_dense(&a), b)
}

/// Returns `(max deviation from the oracle, max complementarity / |b|)`.
pub fn pdas_against_oracle(problem: &PdasProblem) -> Result<(f64, f64)> {
    let s = solve_pdas(problem, None)?;
    let oracle = projected_gradient(problem, 1e-15, 500_000);
    let dev = s.x.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let comp = problem.complementarity_residual(&s.x) / math::norm2(&problem.b).max(f64::MIN_POSITIVE);
    Ok((dev, comp))
}

pub fn check_pdas(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3));
    let (mut dev, mut comp) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let n = rng.random_range(2..=50);
        let (d, c) = pdas_against_oracle(&random_box_qp(rng.random(), n))?;
        dev = dev.max(d);
        comp = comp.max(c);
    }
    Ok(vec![
        Check::at_most("pdas vs projected gradient", dev, 1e-8, "20 random problems".into()),
        Check::at_most("pdas complementarity", comp, 1e-10, "relative to |b|".into()),
    ])
}

/// `y* = cos(pi x) cos(pi y)` with `f = 2 pi^2 y* + y*^3` and no inclusion.
pub fn manufactured_errors(hs: &[f64]) -> Result<Vec<f64>> {
    use core::f64::consts::PI;
    let exact = |p: Point| math::cos(PI * p[0]) * math::cos(PI * p[1]);
    hs.iter()
        .map(|&h| {
            let m = build_square_mesh(h)?;
            let f = interpolate_nodal(&m, |p| {
                let y = exact(p);
                2.0 * PI * PI * y + y * y * y
            })?;
            let y = solve_direct(&m, &NodalField::zeros(&m), &f, K, 1e-13)?;
            Ok(l2_error(&m, y.y.values(), exact))
        })
        .collect()
}

pub fn check_forward(_opts: &VerifyOptions) -> Result<Vec<Check>> {
    let hs = [0.2, 0.1, 0.05, 0.025];
    let errs = manufactured_errors(&hs)?;
    let order = (0..hs.len() - 1)
        .map(|i| math::log(errs[i] / errs[i + 1]) / math::log(hs[i] / hs[i + 1]))
        .fold(f64::INFINITY, f64::min);
    let m = build_square_mesh(0.1)?;
    let u = NodalField::zeros(&m);
    let mut worst: f64 = 0.0;
    for (c, expect) in [(1.0, 1.0), (8.0, 2.0)] {
        let y = solve_direct(&m, &u, &NodalField::constant(&m, c), K, 1e-14)?;
        worst = worst.max(y.y.values().iter().map(|v| (v - expect).abs()).fold(0.0, f64::max));
    }
    Ok(vec![
        Check::at_least("manufactured L2 order", order, 1.9, format!("errors {}", sci(&errs))),
        Check::at_most("constant solutions", worst, 1e-10, "f = 1 and f = 8".into()),
    ])
}

/// Short parabolic obstacle run on a coarse mesh; counts accepted steps that
/// raised the cost.
pub fn check_energy_decrease(_opts: &VerifyOptions) -> Result<Check> {
    let mesh = build_square_mesh(0.1)?;
    let truth = interpolate_nodal(&mesh, |p| if math::dist(p, [0.1, 0.2]) < 0.4 { 1.0 } else { 0.0 })?;
    let sources = vec![interpolate_nodal(&mesh, |p| p[0])?, interpolate_nodal(&mesh, |p| p[1])?];
    let measurements = exact_measurements(&mesh, &truth, &sources, K)?;
    let eps = 1.0 / (8.0 * core::f64::consts::PI);
    let mut params = PopParams::new(ObjectiveParams::new(1e-4, eps, K), 0.05 / eps, 1e-4);
    params.max_iters = 300;
    let source = FixedMeasurements::new(&mesh, measurements);
    let res = run_pop(&params, &mesh, NodalField::zeros(&mesh), &source)?;
    let violations = res.trace.windows(2).filter(|w| w[1].cost.total > w[0].cost.total).count();
    Ok(Check::at_most(
        "energy decrease",
        violations as f64,
        0.0,
        format!("{} accepted steps, {} rejected", res.trace.len() - 1, res.rejected_steps),
    ))
}

/// Square mesh refined to `h_fine` in a band of half width `band` around
/// the circle.
pub fn circle_adapted_mesh(h: f64, center: Point, radius: f64, band: f64, h_fine: f64) -> Result<TriMesh> {
    let mut mesh = build_square_mesh(h)?;
    for _ in 0..16 {
        let marked: Vec<usize> = (0..mesh.num_triangles())
            .filter(|&t| mesh.diameter(t) > h_fine)
            .filter(|&t| (math::dist(mesh.centroid(t), center) - radius).abs() < band + mesh.diameter(t))
            .collect();
        if marked.is_empty() {
            break;
        }
        mesh = refine(&mesh, &AdaptationMarking::refine_only(marked))?;
    }
    Ok(mesh)
}

/// Ginzburg-Landau energy `alpha (eps |grad u|^2 + u (1 - u) / eps)` of the
/// optimal profile across a circle, divided by `alpha` times the circle
/// length. Tends to `pi/4`.
pub fn modica_mortola_ratio(eps: f64, radius: f64) -> Result<f64> {
    let center = [0.05, -0.1];
    let mesh = circle_adapted_mesh(0.04, center, radius, 2.0 * eps, eps / 8.0)?;
    let inc = PolygonInclusion::disc(center, radius, 2048)?;
    let u = inc.smoothed_indicator(&mesh, eps)?;
    let alpha = 1.0;
    let norms = Norms::new(&mesh);
    let grad = eps * norms.stiffness.bilinear(u.values(), u.values());
    let mu = norms.mass.mul_vec(u.values());
    let well: f64 = mu.iter().zip(u.values()).map(|(m, x)| m - m * x).sum::<f64>() / eps;
    Ok(alpha * (grad + well) / (2.0 * core::f64::consts::PI * radius))
}

pub fn check_modica_mortola(_opts: &VerifyOptions) -> Result<Check> {
    let ratio = modica_mortola_ratio(1.0 / (16.0 * core::f64::consts::PI), 0.4)?;
    let rel = (ratio / core::f64::consts::FRAC_PI_4 - 1.0).abs();
    Ok(Check::at_most("modica-mortola constant", rel, 0.05, format!("energy / length = {ratio:.5}")))
}

/// Runs every check. Failures of the underlying solvers are reported as
/// failed checks.
pub fn run_all(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Result<Vec<Check>>| match r {
        Ok(c) => out.extend(c),
        Err(e) => out.push(Check {
            name,
            passed: false,
            value: f64::NAN,
            bound: f64::NAN,
            detail: format!("{e}"),
        }),
    };
    push("gradient taylor slope", check_gradient_taylor(opts).map(|c| vec![c]));
    push("adjoint identity", check_adjoint_identity(opts).map(|c| vec![c]));
    push("linearized forward slope", check_linearized_order(opts).map(|c| vec![c]));
    push("material derivative slope", check_material_derivative(opts).map(|c| vec![c]));
    push("pdas", check_pdas(opts));
    push("forward solver", check_forward(opts));
    push("energy decrease", check_energy_decrease(opts).map(|c| vec![c]));
    push("modica-mortola constant", check_modica_mortola(opts).map(|c| vec![c]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_gradient_gives_first_order() {
        let fx = Fixture::new(0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (u, t) = fx.random_pair(&mut rng).unwrap();
        let good = gradient_remainders(&fx, u.values(), t.values(), false).unwrap();
        let bad = gradient_remainders(&fx, u.values(), t.values(), true).unwrap();
        let slope = math::loglog_slope(&TAYLOR_STEPS, &bad);
        assert!((slope - 1.0).abs() < 0.1, "{slope}");
        assert!(math::loglog_slope(&TAYLOR_STEPS, &good) > 1.9);
    }

    #[test]
    fn adjoint_routes_agree() {
        let fx = Fixture::new(0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (u, t) = fx.random_pair(&mut rng).unwrap();
        let (a, b) = misfit_derivative_routes(&fx, &u, &t).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.abs(), "{a} {b}");
    }

    #[test]
    fn pdas_oracle_on_small_problems() {
        for seed in 0..5 {
            let (d, c) = pdas_against_oracle(&random_box_qp(seed, 12)).unwrap();
            assert!(d < 1e-8 && c < 1e-10);
        }
    }
}
