use std::path::Path;
use std::process::{Command, Output};

use pfrecon::formats::{read_mesh, read_polygon, read_trace};
use pfrecon::Config;

const SMALL: &str = r#"
seed = 5
[model]
alpha = 1e-3
eps = 0.1
tau_c = 0.05
[mesh]
h = 0.1
truth_factor = 2.0
[[phantom]]
kind = "disc"
center = [0.1, 0.2]
radius = 0.4
[pop]
max_iters = 120
snapshot_every = 50
[shape]
max_iters = 15
init_radius = 0.2
[sweep]
eps = [0.2, 0.1]
"#;

fn pfrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfrecon")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn summary(dir: &Path) -> toml::Table {
    std::fs::read_to_string(dir.join("summary.toml")).unwrap().parse().unwrap()
}

fn run_ok(args: &[&str]) {
    let out = pfrecon(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn assert_run_dir(dir: &Path) {
    for f in ["config.toml", "version.txt", "summary.toml"] {
        assert!(dir.join(f).exists(), "{f} missing in {}", dir.display());
    }
    let echo = std::fs::read_to_string(dir.join("config.toml")).unwrap();
    Config::parse(&echo).expect("config echo re-parses");
}

#[test]
fn generate_writes_one_file_per_source_and_records_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}\n[data]\nnoise = 0.01\n"));
    let out = tmp.path().join("gen");
    run_ok(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_run_dir(&out);
    assert!(out.join("source_0.csv").exists() && out.join("source_1.csv").exists());
    assert!(!out.join("source_2.csv").exists());
    let s = summary(&out);
    for v in s["realised_noise"].as_array().unwrap() {
        assert!((v.as_float().unwrap() - 0.01).abs() < 1e-12);
    }
    let mesh = read_mesh(&out.join("mesh.txt")).unwrap();
    assert_eq!(mesh.num_triangles() as i64, s["work_triangles"].as_integer().unwrap());
}

#[test]
fn missing_phantom_is_exit_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\nalpha = 1e-3\n");
    let out = pfrecon(&["generate", "--config", &cfg, "--out", tmp.path().join("g").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_is_exit_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\nk = 2.0\n");
    let out = pfrecon(&["reconstruct-pop", "--config", &cfg, "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_measurements_are_a_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = pfrecon(&[
        "reconstruct-pop",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("r").to_str().unwrap(),
        "--data",
        tmp.path().join("nowhere").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn pop_runs_are_reproducible_and_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let gen = tmp.path().join("gen");
    run_ok(&["generate", "--config", &cfg, "--out", gen.to_str().unwrap()]);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        run_ok(&[
            "reconstruct-pop",
            "--config",
            &cfg,
            "--out",
            d.to_str().unwrap(),
            "--data",
            gen.to_str().unwrap(),
            "--snapshot-every",
            "40",
        ]);
    }
    assert_run_dir(&a);
    let ta = std::fs::read(a.join("trace.csv")).unwrap();
    assert_eq!(ta, std::fs::read(b.join("trace.csv")).unwrap());
    let rows = read_trace(&a.join("trace.csv")).unwrap();
    assert_eq!(rows[0][0], 0.0);
    assert!(rows.windows(2).all(|w| w[1][5] <= w[0][5]));
    let s = summary(&a);
    assert_eq!(s["iterations"].as_integer().unwrap() as usize + 1, rows.len());
    assert!((s["time"].as_float().unwrap() - rows.last().unwrap()[1]).abs() < 1e-9);
    assert!(a.join("snapshots/u_000040.vtk").exists() && a.join("snapshots/u_000080.vtk").exists());
    assert!(a.join("u_final.txt").exists());
}

#[test]
fn shape_run_writes_polygons_and_monotone_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("s");
    run_ok(&["reconstruct-shape", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_run_dir(&out);
    let rows = read_trace(&out.join("trace.csv")).unwrap();
    assert!(rows.windows(2).all(|w| w[1][5] < w[0][5]));
    let last = rows.len() - 1;
    let final_poly = read_polygon(&out.join("polygon_final.csv")).unwrap();
    assert_eq!(read_polygon(&out.join(format!("polygons/iter_{last:05}.csv"))).unwrap(), final_poly);
    let s = summary(&out);
    assert_eq!(s["components"].as_integer(), Some(1));
}

#[test]
fn verify_passes_and_detects_a_corrupted_gradient() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = tmp.path().join("ok");
    run_ok(&["verify", "--out", ok.to_str().unwrap()]);
    let report = std::fs::read_to_string(ok.join("report.txt")).unwrap();
    assert!(!report.contains("FAIL"));

    let bad = tmp.path().join("bad");
    let out = pfrecon(&["verify", "--out", bad.to_str().unwrap(), "--corrupt-gradient"]);
    assert_eq!(out.status.code(), Some(4));
    let report = std::fs::read_to_string(bad.join("report.txt")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("FAIL") && l.contains("taylor")), "{report}");
}

#[test]
fn sweep_runs_each_eps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("sw");
    run_ok(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "11"]);
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    for i in 0..2 {
        assert_run_dir(&out.join(format!("eps_{i}")));
    }
    let echo = Config::parse(&std::fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(echo.seed, 11);
}
