//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.
//! `ACCEPTANCE_STRICT=1` turns any failure into a nonzero exit status.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pfrecon_core::data::{
    count_components, count_element_components, interface_width, reconstruction_error, MeasurementSource, Phantom,
    Shape, SourceTerm, SyntheticData,
};
use pfrecon_core::fem::{interpolate_nodal, l2_error, NodalField, Norms};
use pfrecon_core::forward::{solve_direct, solve_linearized};
use pfrecon_core::mesh::{build_square_mesh, build_square_mesh_with, AdaptParams, MeshPattern, TriMesh};
use pfrecon_core::objective::{Measurement, Objective, ObjectiveParams};
use pfrecon_core::pdas::{solve_pdas, PdasProblem};
use pfrecon_core::pop::{run_pop, AdaptSettings, PopParams, PopResult};
use pfrecon_core::shape::{
    bump, deformation_field, relaxed_directional_derivative, run_shape_descent, solve_material_derivative,
    CurvatureWeight, PolygonInclusion, SharpObjective, SharpParams, ShapeParams,
};
use pfrecon_core::verify::circle_adapted_mesh;
use pfrecon_core::{CsrMatrix, TriMesh as Mesh};

const K: f64 = 0.1;
const H: f64 = 0.04;
const ALPHA: f64 = 1e-4;
const DISC_CENTER: [f64; 2] = [0.1, 0.2];
const DISC_RADIUS: f64 = 0.4;

fn eps8() -> f64 {
    1.0 / (8.0 * PI)
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Least-squares slope of log(err) against log(step).
fn slope(steps: &[f64], errs: &[f64]) -> f64 {
    let n = steps.len() as f64;
    let xs: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn domain() -> ([f64; 2], [f64; 2]) {
    ([-1.0, -1.0], [1.0, 1.0])
}

fn work_mesh() -> TriMesh {
    build_square_mesh_with(MeshPattern::Lattice, H).unwrap()
}

fn synthetic(phantom: &Phantom, noise: f64) -> SyntheticData {
    let (lo, hi) = domain();
    let truth = pfrecon_core::data::build_truth_mesh(MeshPattern::Lattice, lo, hi, H, 4.0, phantom).unwrap();
    SyntheticData::new(phantom, truth, &[SourceTerm::X, SourceTerm::Y], K, noise, 7).unwrap()
}

fn disc_phantom() -> Phantom {
    let (lo, hi) = domain();
    Phantom::new(vec![Shape::Disc { center: DISC_CENTER, radius: DISC_RADIUS }], lo, hi, 0.1).unwrap()
}

fn pop_params(alpha: f64, eps: f64) -> PopParams {
    PopParams::new(ObjectiveParams::new(alpha, eps, K), 0.01 / eps, 1e-4)
}

/// Lazily computed runs shared by several criteria.
#[derive(Default)]
struct Shared {
    disc_data: Option<SyntheticData>,
    disc_run: Option<PopResult>,
}

impl Shared {
    fn disc_data(&mut self) -> &SyntheticData {
        self.disc_data.get_or_insert_with(|| synthetic(&disc_phantom(), 0.0))
    }

    fn disc_run(&mut self) -> &PopResult {
        if self.disc_run.is_none() {
            let mesh = work_mesh();
            let data = self.disc_data().clone();
            let res = run_pop(&pop_params(ALPHA, eps8()), &mesh, NodalField::zeros(&mesh), &data).unwrap();
            self.disc_run = Some(res);
        }
        self.disc_run.as_ref().unwrap()
    }
}

fn criterion_1(s: &mut Shared) -> Outcome {
    let res = s.disc_run();
    let violations = res.trace.windows(2).filter(|w| w[1].cost.total > w[0].cost.total).count();
    outcome(
        violations == 0,
        format!(
            "{} accepted iterates, {} increases, J {:.4e} -> {:.4e}",
            res.trace.len(),
            violations,
            res.trace[0].cost.total,
            res.trace.last().unwrap().cost.total
        ),
    )
}

/// Taylor fixture: smooth disc data on a square mesh.
fn taylor_fixture() -> (TriMesh, Vec<Measurement>, ObjectiveParams) {
    let mesh = build_square_mesh(0.1).unwrap();
    let truth = interpolate_nodal(&mesh, |p| {
        let d = 0.35 - ((p[0] - 0.1).powi(2) + (p[1] - 0.15).powi(2)).sqrt();
        (0.5 + 0.5 * (d / 0.1).clamp(-PI / 2.0, PI / 2.0).sin()).clamp(0.0, 1.0)
    })
    .unwrap();
    let meas = [|p: [f64; 2]| p[0], |p: [f64; 2]| p[1]]
        .iter()
        .map(|g| {
            let f = interpolate_nodal(&mesh, g).unwrap();
            let y = solve_direct(&mesh, &truth, &f, K, 1e-14).unwrap().y;
            Measurement { f, y_meas: y }
        })
        .collect();
    let mut params = ObjectiveParams::new(1e-3, 0.1, K);
    params.newton_tol = 1e-14;
    (mesh, meas, params)
}

fn random_pair(mesh: &TriMesh, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = mesh.num_vertices();
    let u = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
    let t = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (u, t)
}

fn criterion_2(_: &mut Shared) -> Outcome {
    let (mesh, meas, params) = taylor_fixture();
    let obj = Objective::new(&mesh, &meas, params).unwrap();
    let steps = [1e-1, 5e-2, 2e-2, 1e-2, 1e-3, 5e-4, 1e-4];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut slopes = Vec::new();
    let mut worst_gap: f64 = 0.0;
    let norms = Norms::new(&mesh);
    for _ in 0..5 {
        let (u, t) = random_pair(&mesh, &mut rng);
        let ev = obj.evaluate(&u, None).unwrap();
        let g = obj.gradient(&u, &ev.states).unwrap();
        let dj: f64 = g.iter().zip(&t).map(|(a, b)| a * b).sum();
        let at = |s: f64| -> f64 {
            let v: Vec<f64> = u.iter().zip(&t).map(|(a, b)| a + s * b).collect();
            obj.evaluate(&v, None).unwrap().cost.total
        };
        let errs: Vec<f64> = steps.iter().map(|&s| (at(s) - at(-s) - 2.0 * s * dj).abs()).collect();
        slopes.push(slope(&steps, &errs));

        // misfit derivative from the linearized states versus the adjoint gradient
        let uf = NodalField::new(&mesh, u.clone()).unwrap();
        let tf = NodalField::new(&mesh, t.clone()).unwrap();
        let mut direct = 0.0;
        for m in &meas {
            let y = solve_direct(&mesh, &uf, &m.f, K, 1e-14).unwrap();
            let sy = solve_linearized(&mesh, &uf, &y, &tf, K).unwrap();
            let d: Vec<f64> = y.y.values().iter().zip(m.y_meas.values()).map(|(a, b)| a - b).collect();
            direct += norms.boundary_mass.bilinear(&d, sy.values());
        }
        direct /= meas.len() as f64;
        let adj: f64 = obj.pde_gradient(&u, &ev.states).unwrap().iter().zip(&t).map(|(a, b)| a * b).sum();
        worst_gap = worst_gap.max((direct - adj).abs() / direct.abs());
    }
    let min_slope = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        min_slope >= 1.9 && worst_gap <= 1e-9,
        format!("min Taylor slope {min_slope:.3} (>= 1.9), adjoint identity gap {worst_gap:.2e} (<= 1e-9)"),
    )
}

fn criterion_3(_: &mut Shared) -> Outcome {
    let (mesh, meas, _) = taylor_fixture();
    let norms = Norms::new(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (u, t) = random_pair(&mesh, &mut rng);
    let uf = NodalField::new(&mesh, u.clone()).unwrap();
    let tf = NodalField::new(&mesh, t.clone()).unwrap();
    let f = &meas[0].f;
    let y = solve_direct(&mesh, &uf, f, K, 1e-14).unwrap();
    let sy = solve_linearized(&mesh, &uf, &y, &tf, K).unwrap();
    let steps = [1e-1, 5e-2, 2e-2, 1e-2, 1e-3, 5e-4, 1e-4];
    let errs: Vec<f64> = steps
        .iter()
        .map(|&s| {
            let v: Vec<f64> = u.iter().zip(&t).map(|(a, b)| a + s * b).collect();
            let ys = solve_direct(&mesh, &NodalField::new(&mesh, v).unwrap(), f, K, 1e-14).unwrap();
            let r: Vec<f64> = (0..mesh.num_vertices())
                .map(|i| ys.y.values()[i] - y.y.values()[i] - s * sy.values()[i])
                .collect();
            norms.h1(&r)
        })
        .collect();
    let lin = slope(&steps, &errs);

    // material derivative against solves on the deformed mesh
    let profile = |p: [f64; 2]| {
        let d = 0.35 - ((p[0] - 0.1).powi(2) + p[1].powi(2)).sqrt();
        0.5 + 0.5 * (d / 0.1).clamp(-PI / 2.0, PI / 2.0).sin()
    };
    let src = |p: [f64; 2]| 1.0 + p[0] - 0.5 * p[1];
    let u = interpolate_nodal(&mesh, profile).unwrap();
    let f = interpolate_nodal(&mesh, src).unwrap();
    let y = solve_direct(&mesh, &u, &f, K, 1e-14).unwrap().y;
    let field = |p: [f64; 2]| {
        let b = bump(p, 0.9);
        [b * (0.5 + p[1]), -0.7 * b * p[0]]
    };
    let v = deformation_field(&mesh, field);
    let sd = solve_material_derivative(&mesh, &u, &y, &v, &f, K).unwrap();
    let tsteps = [1e-1, 5e-2, 2e-2, 1e-2, 5e-3];
    let merrs: Vec<f64> = tsteps
        .iter()
        .map(|&s| {
            let mt = mesh.displaced(&v, s).unwrap();
            let ft = interpolate_nodal(&mt, src).unwrap();
            let yt = solve_direct(&mt, &u.rebind(&mt).unwrap(), &ft, K, 1e-14).unwrap().y;
            let r: Vec<f64> = (0..mesh.num_vertices())
                .map(|i| yt.values()[i] - y.values()[i] - s * sd.values()[i])
                .collect();
            norms.h1(&r)
        })
        .collect();
    let mat = slope(&tsteps, &merrs);
    outcome(
        lin >= 1.9 && mat >= 1.9,
        format!("linearized slope {lin:.3}, material derivative slope {mat:.3} (both >= 1.9)"),
    )
}

/// Reference solution by projected gradient with step 1/|A|_inf.
fn projected_gradient_oracle(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let lip = a.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut x = vec![0.0; n];
    for _ in 0..1_000_000 {
        let mut change: f64 = 0.0;
        for i in 0..n {
            let g: f64 = (0..n).map(|j| a[i][j] * x[j]).sum::<f64>() - b[i];
            let xn = (x[i] - g / lip).clamp(0.0, 1.0);
            change = change.max((xn - x[i]).abs());
            x[i] = xn;
        }
        if change < 1e-15 {
            break;
        }
    }
    x
}

fn criterion_4(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut dev, mut comp): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let n = rng.random_range(2..=50);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = rng.random_range(0.5..2.0);
        }
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.2) {
                    let w = rng.random_range(0.0..1.0);
                    a[i][i] += w;
                    a[j][j] += w;
                    a[i][j] -= w;
                    a[j][i] -= w;
                }
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..4.0)).collect();
        let p = PdasProblem::unit_box(CsrMatrix::from_dense(&a), b.clone());
        let x = solve_pdas(&p, None).unwrap().x;
        let oracle = projected_gradient_oracle(&a, &b);
        dev = dev.max(x.iter().zip(&oracle).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
        // natural residual |x - P(x - (Ax - b))|
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = (0..n)
            .map(|i| {
                let g: f64 = (0..n).map(|j| a[i][j] * x[j]).sum::<f64>() - b[i];
                (x[i] - (x[i] - g).clamp(0.0, 1.0)).abs()
            })
            .fold(0.0, f64::max);
        comp = comp.max(r / bn);
    }
    outcome(
        dev <= 1e-8 && comp <= 1e-10,
        format!("max deviation {dev:.2e} (<= 1e-8), complementarity {comp:.2e}|b| (<= 1e-10|b|)"),
    )
}

fn criterion_5(_: &mut Shared) -> Outcome {
    let exact = |p: [f64; 2]| (PI * p[0]).cos() * (PI * p[1]).cos();
    let hs = [0.2, 0.1, 0.05, 0.025];
    let errs: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let m = build_square_mesh(h).unwrap();
            let f = interpolate_nodal(&m, |p| {
                let y = exact(p);
                2.0 * PI * PI * y + y * y * y
            })
            .unwrap();
            let y = solve_direct(&m, &NodalField::zeros(&m), &f, K, 1e-13).unwrap();
            l2_error(&m, y.y.values(), exact)
        })
        .collect();
    let orders: Vec<f64> = (0..3).map(|i| (errs[i] / errs[i + 1]).ln() / (hs[i] / hs[i + 1]).ln()).collect();
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    let m = build_square_mesh(0.1).unwrap();
    let mut worst: f64 = 0.0;
    for (c, expect) in [(1.0, 1.0), (8.0, 2.0)] {
        let y = solve_direct(&m, &NodalField::zeros(&m), &NodalField::constant(&m, c), K, 1e-14).unwrap();
        worst = worst.max(y.y.values().iter().map(|v| (v - expect).abs()).fold(0.0, f64::max));
    }
    outcome(
        min_order >= 1.9 && worst <= 1e-10,
        format!("L2 orders {orders:.3?} (>= 1.9), constant solutions max error {worst:.1e} (<= 1e-10)"),
    )
}

fn criterion_6(s: &mut Shared) -> Outcome {
    let res = s.disc_run();
    let m = reconstruction_error(&res.state.u, &disc_phantom(), &res.mesh).unwrap();
    let iters = res.state.iter;
    outcome(
        m.sym_diff_ratio <= 0.2 && (100..=5000).contains(&iters),
        format!(
            "sym-diff ratio {:.4} (<= 0.2), {} iterations (in [100, 5000]), status {:?}, T = {:.1}",
            m.sym_diff_ratio, iters, res.status, res.state.t
        ),
    )
}

fn criterion_7(s: &mut Shared) -> Outcome {
    let eps = eps8();
    let res = s.disc_run();
    let w8 = interface_width(&res.mesh, &res.state.u, DISC_CENTER, 0.75, 64).unwrap();
    let data = s.disc_data().clone();
    let eps16 = 1.0 / (16.0 * PI);
    let mesh = work_mesh();
    let mut params = pop_params(ALPHA, eps16);
    params.adapt = Some(AdaptSettings {
        every: 50,
        params: AdaptParams::default(),
    });
    let res16 = run_pop(&params, &mesh, NodalField::zeros(&mesh), &data).unwrap();
    let w16 = interface_width(&res16.mesh, &res16.state.u, DISC_CENTER, 0.75, 64).unwrap();
    let within = |w: Option<f64>, e: f64| w.map_or(false, |w| w >= e / 4.0 && w <= e);
    let ratio = |w: Option<f64>, e: f64| w.map_or(f64::NAN, |w| w / e);
    outcome(
        within(w8, eps) && within(w16, eps16),
        format!(
            "width/eps = {:.3} at 1/(8pi), {:.3} at 1/(16pi) with adaptation ({} iterations, {} triangles, status {:?}); required in [0.25, 1]",
            ratio(w8, eps),
            ratio(w16, eps16),
            res16.state.iter,
            res16.mesh.num_triangles(),
            res16.status
        ),
    )
}

fn two_circles() -> Phantom {
    let (lo, hi) = domain();
    Phantom::new(
        vec![
            Shape::Disc { center: [-0.4, 0.35], radius: 0.25 },
            Shape::Disc { center: [0.4, -0.35], radius: 0.25 },
        ],
        lo,
        hi,
        0.1,
    )
    .unwrap()
}

fn criterion_8(_: &mut Shared) -> Outcome {
    let data = synthetic(&two_circles(), 0.0);
    let mesh = work_mesh();
    let res = run_pop(&pop_params(ALPHA, eps8()), &mesh, NodalField::zeros(&mesh), &data).unwrap();
    let pop_components = count_components(&res.mesh, res.state.u.values(), 0.5);
    let ratio = reconstruction_error(&res.state.u, &two_circles(), &res.mesh).unwrap().sym_diff_ratio;

    let set = data.measure(&mesh).unwrap();
    let params = ShapeParams::new(SharpParams::new(1e-3, K), H);
    let start = PolygonInclusion::disc([0.0, 0.0], 0.02, 12).unwrap();
    let shape = run_shape_descent(&params, &mesh, start, &set.measurements).unwrap();
    let chi = shape.inclusion.indicator(&mesh);
    let shape_components = count_element_components(&mesh, &chi, 0.5);
    outcome(
        pop_components == 2 && shape_components == 1,
        format!(
            "phase field: {pop_components} components (sym-diff {ratio:.3}, {} iterations); shape descent: {shape_components} component ({} iterations, {:?})",
            res.state.iter,
            shape.trace.len() - 1,
            shape.status
        ),
    )
}

fn criterion_9(s: &mut Shared) -> Outcome {
    let eps_list = [1.0 / (4.0 * PI), 1.0 / (8.0 * PI), 1.0 / (16.0 * PI)];
    let band = PI / 2.0 * eps_list[0] + 0.02;
    let mesh: Mesh = circle_adapted_mesh(H, DISC_CENTER, DISC_RADIUS, band, 0.006).unwrap();
    let set = s.disc_data().measure(&mesh).unwrap();
    let inc = PolygonInclusion::disc(DISC_CENTER, DISC_RADIUS, 1024).unwrap();
    let mut sp = SharpParams::new(ALPHA, K);
    sp.curvature = CurvatureWeight::GammaLimit;
    let sharp = SharpObjective::new(&mesh, &set.measurements, sp).unwrap();
    let eval = sharp.evaluate(&inc, None).unwrap();
    let c = DISC_CENTER;
    let fields: [(&str, Box<dyn Fn([f64; 2]) -> [f64; 2]>); 3] = [
        ("x-shift", Box::new(|p| [bump(p, 0.9), 0.0])),
        ("y-shift", Box::new(|p| [0.0, bump(p, 0.9)])),
        ("dilation", Box::new(move |p| [bump(p, 0.9) * (p[0] - c[0]), bump(p, 0.9) * (p[1] - c[1])])),
    ];
    let mut all = true;
    let mut parts = Vec::new();
    for (name, w) in &fields {
        let v = deformation_field(&mesh, w);
        let dj = sharp.directional_derivative(&inc, &eval, &v).unwrap();
        let gaps: Vec<f64> = eps_list
            .iter()
            .map(|&eps| {
                let u = inc.smoothed_indicator(&mesh, eps).unwrap();
                let d = relaxed_directional_derivative(&mesh, &u, &v, &set.measurements, ObjectiveParams::new(ALPHA, eps, K))
                    .unwrap();
                (d.total - dj).abs()
            })
            .collect();
        let mono = gaps.windows(2).all(|w| w[1] < w[0]);
        all &= mono;
        parts.push(format!("{name}: DJ {dj:.3e}, gaps {:.2e} {:.2e} {:.2e}", gaps[0], gaps[1], gaps[2]));
    }
    outcome(all, format!("{} triangles; {}", mesh.num_triangles(), parts.join("; ")))
}

fn criterion_10(_: &mut Shared) -> Outcome {
    // pi/4 = 2 int_0^1 sqrt(s(1-s)) ds, with s = (1 - cos t)/2 the integrand is sin^2(t)/4
    let n = 2000;
    let quad: f64 = 2.0 * (0..n)
        .map(|i| {
            let t = PI * (i as f64 + 0.5) / n as f64;
            t.sin().powi(2) / 4.0 * PI / n as f64
        })
        .sum::<f64>();
    let eps = 1.0 / (16.0 * PI);
    let (center, radius, alpha) = ([0.05, -0.1], 0.4, ALPHA);
    let mesh = circle_adapted_mesh(H, center, radius, 2.0 * eps, eps / 8.0).unwrap();
    let inc = PolygonInclusion::disc(center, radius, 2048).unwrap();
    let u = inc.smoothed_indicator(&mesh, eps).unwrap();
    let norms = Norms::new(&mesh);
    let grad = alpha * eps * norms.stiffness.bilinear(u.values(), u.values());
    let mu = norms.mass.mul_vec(u.values());
    let well = alpha / eps * mu.iter().zip(u.values()).map(|(m, x)| m * (1.0 - x)).sum::<f64>();
    let target = alpha * quad * 2.0 * PI * radius;
    let rel = ((grad + well) / target - 1.0).abs();
    outcome(
        rel <= 0.05,
        format!(
            "GL energy {:.5e} vs alpha (pi/4) L = {target:.5e}, relative error {rel:.2e} (<= 0.05); quadrature pi/4 = {quad:.8}; {} triangles",
            grad + well,
            mesh.num_triangles()
        ),
    )
}

fn criterion_11(s: &mut Shared) -> Outcome {
    let mut noisy = s.disc_data().clone();
    noisy.noise_level = 0.01;
    let mesh = work_mesh();
    let set = noisy.measure(&mesh).unwrap();
    let realised = set.realised_noise.clone();
    let res = run_pop(&pop_params(10.0 * ALPHA, eps8()), &mesh, NodalField::zeros(&mesh), &noisy).unwrap();
    let noisy_ratio = reconstruction_error(&res.state.u, &disc_phantom(), &res.mesh).unwrap().sym_diff_ratio;
    let clean = s.disc_run();
    let clean_ratio = reconstruction_error(&clean.state.u, &disc_phantom(), &clean.mesh).unwrap().sym_diff_ratio;
    outcome(
        noisy_ratio <= 0.35 && clean_ratio <= 0.2,
        format!(
            "delta = 1% (realised {realised:.4?}), alpha x10: sym-diff {noisy_ratio:.4} (<= 0.35, {} iterations); delta = 0: {clean_ratio:.4} (<= 0.2)",
            res.state.iter
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").map_or(false, |v| v != "0");
    let criteria: [(usize, &str, fn(&mut Shared) -> Outcome); 11] = [
        (1, "energy monotonicity", criterion_1),
        (2, "derivative correctness", criterion_2),
        (3, "linearized forward order", criterion_3),
        (4, "PDAS oracle equivalence", criterion_4),
        (5, "forward solver convergence", criterion_5),
        (6, "disc reconstruction quality", criterion_6),
        (7, "interface width law", criterion_7),
        (8, "topology discovery", criterion_8),
        (9, "sharp-limit trend", criterion_9),
        (10, "Modica-Mortola constant", criterion_10),
        (11, "noise robustness", criterion_11),
    ];
    let mut shared = Shared::default();
    let mut results = BTreeMap::new();
    for (id, name, run) in criteria {
        if only.as_ref().map_or(false, |o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let out = run(&mut shared);
        let tag = if out.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {name}: {} ({:.1} s)", out.detail, t.elapsed().as_secs_f64());
        results.insert(id, out.passed);
    }
    let failed: Vec<usize> = results.iter().filter(|(_, p)| !**p).map(|(i, _)| *i).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
