use proptest::prelude::*;

use pfrecon_core::data::{
    build_truth_mesh, reconstruction_error, BoundaryData, MeasurementSource, Phantom, Shape, SourceTerm, SyntheticData,
};
use pfrecon_core::fem::{NodalField, Norms};
use pfrecon_core::forward::solve_direct;
use pfrecon_core::mesh::{build_square_mesh, refine, AdaptationMarking, MeshPattern, PointLocator};
use pfrecon_core::objective::ObjectiveParams;
use pfrecon_core::pop::{run_pop, PopParams};
use pfrecon_core::shape::{run_shape_descent, PolygonInclusion, SharpParams, ShapeParams};
use pfrecon_core::TriMesh;

const K: f64 = 0.1;

fn disc() -> Phantom {
    Phantom::new(
        vec![Shape::Disc { center: [0.1, 0.2], radius: 0.4 }],
        [-1.0, -1.0],
        [1.0, 1.0],
        0.1,
    )
    .unwrap()
}

fn data(h: f64, noise: f64, seed: u64) -> SyntheticData {
    let ph = disc();
    let truth = build_truth_mesh(MeshPattern::Lattice, [-1.0, -1.0], [1.0, 1.0], h, 2.0, &ph).unwrap();
    SyntheticData::new(&ph, truth, &[SourceTerm::X, SourceTerm::Y], K, noise, seed).unwrap()
}

#[test]
fn truth_mesh_data_differ_from_work_mesh_solves() {
    let mesh = build_square_mesh(0.1).unwrap();
    let set = data(0.1, 0.0, 1).measure(&mesh).unwrap();
    let chi = pfrecon_core::data::rasterize(&disc(), &mesh).1;
    let norms = Norms::new(&mesh);
    for m in &set.measurements {
        let y = solve_direct(&mesh, &chi, &m.f, K, 1e-12).unwrap().y;
        let d: Vec<f64> = y.values().iter().zip(m.y_meas.values()).map(|(a, b)| a - b).collect();
        let rel = norms.boundary_l2(&d) / norms.boundary_l2(m.y_meas.values());
        assert!(rel > 1e-6, "pipelines indistinguishable: {rel:e}");
        assert!(rel < 0.2, "pipelines disagree wildly: {rel:e}");
    }
}

#[test]
fn boundary_data_reproduces_itself_and_refines_consistently() {
    let mesh = build_square_mesh(0.2).unwrap();
    let set = data(0.2, 0.0, 1).measure(&mesh).unwrap();
    let b = BoundaryData {
        mesh: mesh.clone(),
        sources: set.sources.clone(),
        values: set.measurements.iter().map(|m| m.y_meas.values().to_vec()).collect(),
        noise_level: 0.0,
    };
    let again = b.measure(&mesh).unwrap();
    for (m, n) in set.measurements.iter().zip(&again.measurements) {
        assert_eq!(m.y_meas.values(), n.y_meas.values());
    }
    let all: Vec<usize> = (0..mesh.num_triangles()).collect();
    let fine = refine(&mesh, &AdaptationMarking::refine_only(all)).unwrap();
    let moved = b.measure(&fine).unwrap();
    let loc = PointLocator::new(&mesh);
    for (m, n) in set.measurements.iter().zip(&moved.measurements) {
        for v in fine.boundary_vertices() {
            let expect = loc.evaluate(m.y_meas.values(), fine.vertices()[v]).unwrap();
            assert!((n.y_meas.values()[v] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn small_pop_run_is_monotone_and_finds_the_disc() {
    let mesh = build_square_mesh(0.1).unwrap();
    let src = data(0.1, 0.0, 1);
    let eps = 0.1;
    let mut params = PopParams::new(ObjectiveParams::new(1e-3, eps, K), 0.05 / eps, 1e-4);
    params.max_iters = 400;
    let res = run_pop(&params, &mesh, NodalField::zeros(&mesh), &src).unwrap();
    assert!(res.trace.windows(2).all(|w| w[1].cost.total <= w[0].cost.total));
    assert!(res.state.u.in_unit_box());
    let m = reconstruction_error(&res.state.u, &disc(), &res.mesh).unwrap();
    assert!(m.sym_diff_ratio < 0.3, "{}", m.sym_diff_ratio);
}

#[test]
fn small_shape_run_decreases_cost() {
    let mesh = build_square_mesh(0.1).unwrap();
    let set = data(0.1, 0.0, 1).measure(&mesh).unwrap();
    let mut params = ShapeParams::new(SharpParams::new(1e-3, K), 0.1);
    params.max_iters = 20;
    let start = PolygonInclusion::disc([0.0, 0.0], 0.2, 12).unwrap();
    let res = run_shape_descent(&params, &mesh, start, &set.measurements).unwrap();
    assert!(res.trace.len() > 1);
    assert!(res.trace.windows(2).all(|w| w[1].cost.total < w[0].cost.total));
    assert!(res.inclusion.is_simple());
}

fn refined_mesh(seed: u64) -> TriMesh {
    let mesh = build_square_mesh(0.25).unwrap();
    let marked: Vec<usize> = (0..mesh.num_triangles()).filter(|t| (t * 7 + seed as usize) % 5 == 0).collect();
    refine(&mesh, &AdaptationMarking::refine_only(marked)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noise_has_exact_relative_level(delta in 0.0f64..0.05, seed in 0u64..1000) {
        let mesh = build_square_mesh(0.25).unwrap();
        let set = data(0.25, delta, seed).measure(&mesh).unwrap();
        for r in set.realised_noise {
            prop_assert!((r - delta).abs() < 1e-12);
        }
    }

    #[test]
    fn locate_then_reconstruct_is_identity(seed in 0u64..5, x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let mesh = refined_mesh(seed);
        let loc = PointLocator::new(&mesh).locate([x, y]).unwrap();
        let c = mesh.corners(loc.triangle);
        prop_assert!(loc.bary.iter().all(|b| (-1e-12..=1.0 + 1e-12).contains(b)));
        let px: f64 = (0..3).map(|i| loc.bary[i] * c[i][0]).sum();
        let py: f64 = (0..3).map(|i| loc.bary[i] * c[i][1]).sum();
        prop_assert!((px - x).abs() < 1e-12 && (py - y).abs() < 1e-12);
    }

    #[test]
    fn refinement_preserves_area(seed in 0u64..50) {
        let mesh = refined_mesh(seed);
        prop_assert!((mesh.total_area() - 4.0).abs() < 4e-10);
    }
}
