//! Subcommand implementations. Each writes into a run directory holding the
//! effective configuration, a version stamp, its artifacts and `summary.toml`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use toml::{Table, Value};

use pfrecon_core::data::{
    build_truth_mesh, count_components, count_element_components, interface_width, rasterize, reconstruction_error,
    BoundaryData, MeasurementSource, Phantom, Shape, SyntheticData,
};
use pfrecon_core::fem::NodalField;
use pfrecon_core::mesh::{build_rectangle_mesh, MeshPattern};
use pfrecon_core::objective::CostBreakdown;
use pfrecon_core::pop::{run_pop_with, PopObserver, PopState, TraceRow};
use pfrecon_core::shape::{run_shape_descent_with, PolygonInclusion, ShapeObserver, ShapeTraceRow};
use pfrecon_core::verify::{run_all, VerifyOptions};
use pfrecon_core::TriMesh;

use crate::config::Config;
use crate::error::CliError;
use crate::formats::{self, save, TraceWriter};

const LO: [f64; 2] = [-1.0, -1.0];
const HI: [f64; 2] = [1.0, 1.0];

pub fn version_stamp() -> String {
    format!("pfrecon {}\n", env!("CARGO_PKG_VERSION"))
}

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `root` and writes the configuration echo and version stamp.
    pub fn create(root: &Path, cfg: &Config, command: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let dir = RunDir { root: root.to_path_buf() };
        let echo = format!("# command: {command}\n{}", cfg.to_toml());
        std::fs::write(dir.path("config.toml"), echo).map_err(|e| CliError::io(root, e))?;
        std::fs::write(dir.path("version.txt"), version_stamp()).map_err(|e| CliError::io(root, e))?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_summary(&self, summary: &Table) -> Result<(), CliError> {
        let path = self.path("summary.toml");
        let text = toml::to_string(summary).expect("summary serializes");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    fn trace_writer(&self) -> Result<TraceWriter<BufWriter<File>>, CliError> {
        let path = self.path("trace.csv");
        TraceWriter::new(formats::create(&path)?).map_err(|e| CliError::io(&path, e))
    }
}

fn work_mesh(cfg: &Config) -> Result<TriMesh, CliError> {
    Ok(build_rectangle_mesh(MeshPattern::from(cfg.mesh.pattern), LO, HI, cfg.mesh.h)?)
}

fn costs(c: &CostBreakdown) -> Table {
    let mut t = Table::new();
    t.insert("j_pde".into(), c.j_pde.into());
    t.insert("j_gl_gradient".into(), c.j_gl_gradient.into());
    t.insert("j_gl_well".into(), c.j_gl_well.into());
    t.insert("total".into(), c.total.into());
    t
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| Value::Float(*x)).collect())
}

fn int(n: usize) -> Value {
    Value::Integer(n as i64)
}

/// Measurement source of a reconstruction.
pub enum Data {
    Synthetic(SyntheticData),
    Files(BoundaryData),
}

impl Data {
    pub fn source(&self) -> &dyn MeasurementSource {
        match self {
            Data::Synthetic(s) => s,
            Data::Files(b) => b,
        }
    }

    fn describe(&self) -> Table {
        let mut t = Table::new();
        match self {
            Data::Synthetic(s) => {
                t.insert("origin".into(), "synthetic".into());
                t.insert("truth_vertices".into(), int(s.truth_mesh.num_vertices()));
                t.insert("truth_triangles".into(), int(s.truth_mesh.num_triangles()));
                t.insert("noise".into(), s.noise_level.into());
                t.insert("transfer".into(), "linear interpolation on the truth mesh".into());
            }
            Data::Files(b) => {
                t.insert("origin".into(), "files".into());
                t.insert("mesh_vertices".into(), int(b.mesh.num_vertices()));
                t.insert("noise".into(), b.noise_level.into());
                t.insert("transfer".into(), "linear interpolation along the boundary".into());
            }
        }
        t
    }
}

fn synthetic(cfg: &Config, phantom: &Phantom) -> Result<SyntheticData, CliError> {
    let pattern = MeshPattern::from(cfg.mesh.pattern);
    let truth = build_truth_mesh(pattern, LO, HI, cfg.mesh.h, cfg.mesh.truth_factor, phantom)?;
    Ok(SyntheticData::new(phantom, truth, &cfg.sources(), cfg.model.k, cfg.data.noise, cfg.seed)?)
}

/// Reads a directory written by `generate`.
pub fn load_data(cfg: &Config, dir: &Path) -> Result<BoundaryData, CliError> {
    let mesh = formats::read_mesh(&dir.join("mesh.txt"))?;
    let sources = cfg.sources();
    let values = (0..sources.len())
        .map(|i| formats::read_measurements(&dir.join(format!("source_{i}.csv")), &mesh))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BoundaryData {
        mesh,
        sources,
        values,
        noise_level: cfg.data.noise,
    })
}

/// Measurement data plus the working mesh: the data mesh for file input,
/// otherwise a fresh mesh from the configuration.
fn prepare(cfg: &Config, data_dir: Option<&Path>) -> Result<(TriMesh, Data, Option<Phantom>), CliError> {
    let phantom = if cfg.phantom.is_empty() { None } else { Some(cfg.phantom()?) };
    let dir = data_dir.map(Path::to_path_buf).or_else(|| cfg.data.dir.clone());
    match dir {
        Some(dir) => {
            let b = load_data(cfg, &dir)?;
            Ok((b.mesh.clone(), Data::Files(b), phantom))
        }
        None => {
            let ph = phantom.ok_or_else(|| CliError::Validation("no phantom and no measurement directory".into()))?;
            let data = synthetic(cfg, &ph)?;
            Ok((work_mesh(cfg)?, Data::Synthetic(data), Some(ph)))
        }
    }
}

pub fn generate(cfg: &Config, out: &Path) -> Result<Table, CliError> {
    let phantom = cfg.phantom()?;
    let dir = RunDir::create(out, cfg, "generate")?;
    let data = synthetic(cfg, &phantom)?;
    let mesh = work_mesh(cfg)?;
    let set = data.measure(&mesh)?;
    save(&dir.path("mesh.txt"), |w| formats::write_mesh(w, &mesh))?;
    for (i, m) in set.measurements.iter().enumerate() {
        save(&dir.path(&format!("source_{i}.csv")), |w| {
            formats::write_measurements(w, &mesh, m.y_meas.values())
        })?;
    }
    let (chi, _) = rasterize(&phantom, &data.truth_mesh);
    let mut point_data: Vec<(String, &[f64])> = Vec::new();
    for (i, y) in data.states.iter().enumerate() {
        point_data.push((format!("y_{i}"), y.values()));
    }
    let pd: Vec<(&str, &[f64])> = point_data.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    save(&dir.path("truth.vtk"), |w| {
        formats::write_vtk(w, &data.truth_mesh, &pd, &[("chi", &chi)])
    })?;

    let mut s = Table::new();
    s.insert("command".into(), "generate".into());
    s.insert("sources".into(), Value::Array(set.sources.iter().map(|f| f.describe().into()).collect()));
    s.insert("noise".into(), set.noise_level.into());
    s.insert("realised_noise".into(), floats(&set.realised_noise));
    s.insert("work_vertices".into(), int(mesh.num_vertices()));
    s.insert("work_triangles".into(), int(mesh.num_triangles()));
    s.insert("data".into(), Value::Table(Data::Synthetic(data).describe()));
    dir.write_summary(&s)?;
    Ok(s)
}

struct PopWriter<'a> {
    dir: &'a RunDir,
    trace: TraceWriter<BufWriter<File>>,
    every: usize,
    error: Option<CliError>,
}

impl PopWriter<'_> {
    fn record(&mut self, mesh: &TriMesh, state: &PopState, row: &TraceRow) {
        if self.error.is_some() {
            return;
        }
        let path = self.dir.path("trace.csv");
        if let Err(e) = self.trace.pop_row(row).and_then(|_| self.trace.flush()) {
            self.error = Some(CliError::io(&path, e));
            return;
        }
        if self.every > 0 && row.iter % self.every == 0 {
            let path = self.dir.path(&format!("snapshots/u_{:06}.vtk", row.iter));
            if let Err(e) = save(&path, |w| formats::write_vtk(w, mesh, &[("u", state.u.values())], &[])) {
                self.error = Some(e);
            }
        }
    }
}

impl PopObserver for PopWriter<'_> {
    fn initial(&mut self, mesh: &TriMesh, state: &PopState, row: &TraceRow) {
        self.record(mesh, state, row);
    }

    fn accepted(&mut self, mesh: &TriMesh, state: &PopState, row: &TraceRow) {
        self.record(mesh, state, row);
    }
}

/// Centre of a single disc phantom, used for the interface width.
fn disc_center(phantom: &Phantom) -> Option<([f64; 2], f64)> {
    match phantom.shapes.as_slice() {
        [Shape::Disc { center, radius }] => Some((*center, *radius)),
        _ => None,
    }
}

pub fn reconstruct_pop(cfg: &Config, out: &Path, data_dir: Option<&Path>) -> Result<Table, CliError> {
    let (mesh, data, phantom) = prepare(cfg, data_dir)?;
    let dir = RunDir::create(out, cfg, "reconstruct-pop")?;
    save(&dir.path("mesh.txt"), |w| formats::write_mesh(w, &mesh))?;
    let mut writer = PopWriter {
        dir: &dir,
        trace: dir.trace_writer()?,
        every: cfg.pop.snapshot_every,
        error: None,
    };
    let start = Instant::now();
    let res = run_pop_with(&cfg.pop_params(), &mesh, NodalField::zeros(&mesh), data.source(), &mut writer)?;
    let elapsed = start.elapsed().as_secs_f64();
    if let Some(e) = writer.error {
        return Err(e);
    }
    let u = res.state.u.values();
    save(&dir.path("mesh_final.txt"), |w| formats::write_mesh(w, &res.mesh))?;
    save(&dir.path("u_final.txt"), |w| formats::write_field(w, u))?;
    save(&dir.path("u_final.vtk"), |w| formats::write_vtk(w, &res.mesh, &[("u", u)], &[]))?;

    let mut s = Table::new();
    s.insert("command".into(), "reconstruct-pop".into());
    s.insert("status".into(), format!("{:?}", res.status).into());
    s.insert("iterations".into(), int(res.state.iter));
    s.insert("time".into(), res.state.t.into());
    s.insert("rejected_steps".into(), int(res.rejected_steps));
    s.insert("adaptations".into(), int(res.adaptations));
    s.insert("final_triangles".into(), int(res.mesh.num_triangles()));
    s.insert("tau".into(), cfg.tau().into());
    s.insert("eps".into(), cfg.model.eps.into());
    s.insert("wall_seconds".into(), elapsed.into());
    s.insert("components".into(), int(count_components(&res.mesh, u, 0.5)));
    s.insert("cost".into(), Value::Table(costs(res.state.cost())));
    s.insert("data".into(), Value::Table(data.describe()));
    if let Some(ph) = &phantom {
        let m = reconstruction_error(&res.state.u, ph, &res.mesh)?;
        s.insert("sym_diff_ratio".into(), m.sym_diff_ratio.into());
        s.insert("reconstructed_area".into(), m.reconstructed_area.into());
        s.insert("true_area".into(), m.true_area.into());
        if let Some((c, r)) = disc_center(ph) {
            let r_max = (r * 1.75).min(1.0 - c[0].abs().max(c[1].abs()));
            if let Some(w) = interface_width(&res.mesh, &res.state.u, c, r_max, 64)? {
                s.insert("interface_width".into(), w.into());
            }
        }
    }
    dir.write_summary(&s)?;
    Ok(s)
}

struct ShapeWriter<'a> {
    dir: &'a RunDir,
    trace: TraceWriter<BufWriter<File>>,
    time: f64,
    error: Option<CliError>,
}

impl ShapeObserver for ShapeWriter<'_> {
    fn accepted(&mut self, inc: &PolygonInclusion, row: &ShapeTraceRow) {
        if self.error.is_some() {
            return;
        }
        self.time += row.step;
        let path = self.dir.path("trace.csv");
        if let Err(e) = self.trace.shape_row(row, self.time).and_then(|_| self.trace.flush()) {
            self.error = Some(CliError::io(&path, e));
            return;
        }
        let path = self.dir.path(&format!("polygons/iter_{:05}.csv", row.iter));
        if let Err(e) = save(&path, |w| formats::write_polygon(w, inc.loops())) {
            self.error = Some(e);
        }
    }
}

pub fn reconstruct_shape(cfg: &Config, out: &Path, data_dir: Option<&Path>) -> Result<Table, CliError> {
    let (mesh, data, phantom) = prepare(cfg, data_dir)?;
    let params = cfg.shape_params();
    let start = match &cfg.shape.init_polygon {
        Some(p) => PolygonInclusion::new(formats::read_polygon(p)?)?,
        None => {
            let r = cfg.shape.init_radius;
            let n = ((2.0 * std::f64::consts::PI * r / params.spacing).ceil() as usize).max(12);
            PolygonInclusion::disc(cfg.shape.init_center, r, n)?
        }
    };
    let set = data.source().measure(&mesh)?;
    let dir = RunDir::create(out, cfg, "reconstruct-shape")?;
    save(&dir.path("mesh.txt"), |w| formats::write_mesh(w, &mesh))?;
    let mut writer = ShapeWriter {
        dir: &dir,
        trace: dir.trace_writer()?,
        time: 0.0,
        error: None,
    };
    let clock = Instant::now();
    let res = run_shape_descent_with(&params, &mesh, start, &set.measurements, &mut writer)?;
    let elapsed = clock.elapsed().as_secs_f64();
    if let Some(e) = writer.error {
        return Err(e);
    }
    let chi = res.inclusion.indicator(&mesh);
    save(&dir.path("polygon_final.csv"), |w| formats::write_polygon(w, res.inclusion.loops()))?;
    save(&dir.path("chi_final.vtk"), |w| formats::write_vtk(w, &mesh, &[], &[("chi", &chi)]))?;

    let c = &res.evaluation.cost;
    let mut cost = Table::new();
    cost.insert("j_pde".into(), c.j_pde.into());
    cost.insert("perimeter".into(), c.perimeter.into());
    cost.insert("regularization".into(), c.regularization.into());
    cost.insert("total".into(), c.total.into());
    let mut s = Table::new();
    s.insert("command".into(), "reconstruct-shape".into());
    s.insert("status".into(), format!("{:?}", res.status).into());
    s.insert("iterations".into(), int(res.trace.len() - 1));
    s.insert("rejected_steps".into(), int(res.rejected_steps));
    s.insert("time".into(), writer.time.into());
    s.insert("wall_seconds".into(), elapsed.into());
    s.insert("points".into(), int(res.inclusion.num_points()));
    s.insert("area".into(), res.inclusion.area().into());
    s.insert("components".into(), int(count_element_components(&mesh, &chi, 0.5)));
    s.insert("cost".into(), Value::Table(cost));
    s.insert("data".into(), Value::Table(data.describe()));
    if let Some(ph) = &phantom {
        let (truth, _) = rasterize(ph, &mesh);
        let diff: f64 = (0..mesh.num_triangles())
            .map(|t| mesh.area(t) * (chi[t] - truth[t]).abs())
            .sum();
        s.insert("sym_diff_ratio".into(), (diff / ph.area()).into());
    }
    dir.write_summary(&s)?;
    Ok(s)
}

/// Runs the verification suite; fails with exit status 4 if any check fails.
pub fn verify(cfg: &Config, out: &Path, corrupt_gradient: bool) -> Result<Table, CliError> {
    let dir = RunDir::create(out, cfg, "verify")?;
    let opts = VerifyOptions {
        seed: cfg.seed,
        h: cfg.verify.h,
        pairs: cfg.verify.pairs,
        corrupt_gradient,
    };
    let checks = run_all(&opts);
    let mut report = String::new();
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        report.push_str(&format!("{tag} {}: {} (value {:e}, bound {:e})\n", c.name, c.detail, c.value, c.bound));
    }
    print!("{report}");
    std::fs::write(dir.path("report.txt"), &report).map_err(|e| CliError::io(&dir.path("report.txt"), e))?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let mut s = Table::new();
    s.insert("command".into(), "verify".into());
    s.insert("checks".into(), int(checks.len()));
    s.insert("failed".into(), Value::Array(failed.iter().map(|n| Value::from(*n)).collect()));
    s.insert("corrupt_gradient".into(), corrupt_gradient.into());
    dir.write_summary(&s)?;
    if failed.is_empty() {
        Ok(s)
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}

/// One phase-field reconstruction per `sweep.eps`, in `out/eps_<i>`, plus
/// `sweep.csv` collecting iterations, costs, errors and widths.
pub fn sweep(cfg: &Config, out: &Path, data_dir: Option<&Path>) -> Result<Table, CliError> {
    let dir = RunDir::create(out, cfg, "sweep")?;
    let mut w = csv::Writer::from_path(dir.path("sweep.csv")).map_err(|e| CliError::Validation(e.to_string()))?;
    let io = |e: csv::Error| CliError::Io {
        path: dir.path("sweep.csv"),
        source: e.into(),
    };
    w.write_record(["eps", "tau", "iterations", "status", "total", "sym_diff_ratio", "interface_width"])
        .map_err(io)?;
    let mut runs = Vec::new();
    for (i, &eps) in cfg.sweep.eps.iter().enumerate() {
        let mut c = cfg.clone();
        c.model.eps = eps;
        let s = reconstruct_pop(&c, &dir.path(&format!("eps_{i}")), data_dir)?;
        let get = |k: &str| s.get(k).map(|v| v.to_string()).unwrap_or_default();
        let total = s["cost"]["total"].to_string();
        w.write_record([
            eps.to_string(),
            c.tau().to_string(),
            get("iterations"),
            s["status"].as_str().unwrap_or_default().to_string(),
            total,
            get("sym_diff_ratio"),
            get("interface_width"),
        ])
        .map_err(io)?;
        w.flush().map_err(|e| CliError::io(&dir.path("sweep.csv"), e))?;
        runs.push(Value::Table(s));
    }
    let mut s = Table::new();
    s.insert("command".into(), "sweep".into());
    s.insert("eps".into(), floats(&cfg.sweep.eps));
    s.insert("runs".into(), Value::Array(runs));
    dir.write_summary(&s)?;
    Ok(s)
}
