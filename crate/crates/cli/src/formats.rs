//! Text file formats: meshes, nodal fields, legacy VTK, cost traces,
//! boundary measurements and polygon outlines.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use pfrecon_core::fem::NodalField;
use pfrecon_core::math::Point;
use pfrecon_core::pop::TraceRow;
use pfrecon_core::shape::ShapeTraceRow;
use pfrecon_core::TriMesh;

use crate::error::CliError;

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Writes with `write` into a new file at `path`.
pub fn save(path: &Path, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    write(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(path: &Path) -> Result<Vec<(usize, String)>, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push((i + 1, t.to_string()));
        }
    }
    Ok(out)
}

fn parse_numbers<T: std::str::FromStr>(path: &Path, line: usize, text: &str, n: usize) -> Result<Vec<T>, CliError> {
    let vals: Vec<T> = text
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| format_err(path, line, format!("cannot parse {s:?}"))))
        .collect::<Result<_, _>>()?;
    if vals.len() != n {
        return Err(format_err(path, line, format!("expected {n} values, found {}", vals.len())));
    }
    Ok(vals)
}

fn header(path: &Path, lines: &[(usize, String)], at: usize, keyword: &str) -> Result<usize, CliError> {
    let (line, text) = lines
        .get(at)
        .ok_or_else(|| format_err(path, 0, format!("missing \"{keyword}\" header")))?;
    match text.split_whitespace().collect::<Vec<_>>().as_slice() {
        [k, n] if *k == keyword => n.parse().map_err(|_| format_err(path, *line, "bad count")),
        _ => Err(format_err(path, *line, format!("expected \"{keyword} N\""))),
    }
}

pub fn write_mesh(w: &mut dyn Write, mesh: &TriMesh) -> io::Result<()> {
    writeln!(w, "vertices {}", mesh.num_vertices())?;
    for p in mesh.vertices() {
        writeln!(w, "{} {}", p[0], p[1])?;
    }
    writeln!(w, "triangles {}", mesh.num_triangles())?;
    for t in mesh.triangles() {
        writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

pub fn read_mesh(path: &Path) -> Result<TriMesh, CliError> {
    let lines = content_lines(path)?;
    let nv = header(path, &lines, 0, "vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for (line, text) in lines.iter().skip(1).take(nv) {
        let v: Vec<f64> = parse_numbers(path, *line, text, 2)?;
        vertices.push([v[0], v[1]]);
    }
    if vertices.len() != nv {
        return Err(format_err(path, 0, "truncated vertex block"));
    }
    let nt = header(path, &lines, nv + 1, "triangles")?;
    let mut triangles = Vec::with_capacity(nt);
    for (line, text) in lines.iter().skip(nv + 2).take(nt) {
        let t: Vec<usize> = parse_numbers(path, *line, text, 3)?;
        triangles.push([t[0], t[1], t[2]]);
    }
    if triangles.len() != nt || lines.len() != nv + nt + 2 {
        return Err(format_err(path, 0, "triangle block does not match its header"));
    }
    TriMesh::from_parts(vertices, triangles).map_err(|e| format_err(path, 0, e.to_string()))
}

pub fn write_field(w: &mut dyn Write, values: &[f64]) -> io::Result<()> {
    writeln!(w, "field {}", values.len())?;
    for v in values {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

pub fn read_field(path: &Path, mesh: &TriMesh) -> Result<NodalField, CliError> {
    let lines = content_lines(path)?;
    let n = header(path, &lines, 0, "field")?;
    if lines.len() != n + 1 {
        return Err(format_err(path, 0, format!("header announces {n} values, found {}", lines.len() - 1)));
    }
    let mut values = Vec::with_capacity(n);
    for (line, text) in &lines[1..] {
        values.push(parse_numbers::<f64>(path, *line, text, 1)?[0]);
    }
    NodalField::new(mesh, values).map_err(|e| format_err(path, 0, e.to_string()))
}

/// Legacy ASCII VTK unstructured grid with optional point and cell scalars.
pub fn write_vtk(
    w: &mut dyn Write,
    mesh: &TriMesh,
    point_data: &[(&str, &[f64])],
    cell_data: &[(&str, &[f64])],
) -> io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "pfrecon")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_vertices())?;
    for p in mesh.vertices() {
        writeln!(w, "{} {} 0", p[0], p[1])?;
    }
    let nt = mesh.num_triangles();
    writeln!(w, "CELLS {} {}", nt, 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    let block = |w: &mut dyn Write, data: &[(&str, &[f64])]| -> io::Result<()> {
        for (name, vals) in data {
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in *vals {
                writeln!(w, "{v}")?;
            }
        }
        Ok(())
    };
    if !point_data.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.num_vertices())?;
        block(w, point_data)?;
    }
    if !cell_data.is_empty() {
        writeln!(w, "CELL_DATA {nt}")?;
        block(w, cell_data)?;
    }
    Ok(())
}

pub const TRACE_HEADER: [&str; 9] = [
    "iter",
    "time",
    "j_pde",
    "j_gl_gradient",
    "j_gl_well",
    "total",
    "step",
    "active_low",
    "active_high",
];

/// Cost-trace CSV writer, shared by both reconstruction methods.
pub struct TraceWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(w: W) -> io::Result<Self> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRACE_HEADER)?;
        Ok(TraceWriter { out })
    }

    fn record(&mut self, fields: [String; 9]) -> io::Result<()> {
        self.out.write_record(&fields)?;
        Ok(())
    }

    pub fn pop_row(&mut self, r: &TraceRow) -> io::Result<()> {
        let c = &r.cost;
        self.record([
            r.iter.to_string(),
            r.time.to_string(),
            c.j_pde.to_string(),
            c.j_gl_gradient.to_string(),
            c.j_gl_well.to_string(),
            c.total.to_string(),
            r.step.to_string(),
            r.active_low.to_string(),
            r.active_high.to_string(),
        ])
    }

    /// The perimeter term goes in `j_gl_gradient`; `time` accumulates the
    /// accepted steps; the well and active-set columns are zero.
    pub fn shape_row(&mut self, r: &ShapeTraceRow, time: f64) -> io::Result<()> {
        let c = &r.cost;
        self.record([
            r.iter.to_string(),
            time.to_string(),
            c.j_pde.to_string(),
            c.regularization.to_string(),
            "0".into(),
            c.total.to_string(),
            r.step.to_string(),
            "0".into(),
            "0".into(),
        ])
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Parsed trace: one row of nine numbers per iterate.
pub fn read_trace(path: &Path) -> Result<Vec<[f64; 9]>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format_err(path, 0, e.to_string()))?;
    let hdr = rdr.headers().map_err(|e| format_err(path, 1, e.to_string()))?;
    if hdr.iter().ne(TRACE_HEADER) {
        return Err(format_err(path, 1, "unexpected trace header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, i + 2, e.to_string()))?;
        let mut row = [0.0; 9];
        for (slot, s) in row.iter_mut().zip(rec.iter()) {
            *slot = s.parse().map_err(|_| format_err(path, i + 2, format!("cannot parse {s:?}")))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Boundary values of one source, rows `vertex,x,y,value`.
pub fn write_measurements(w: &mut dyn Write, mesh: &TriMesh, y: &[f64]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["vertex", "x", "y", "value"])?;
    for v in mesh.boundary_vertices() {
        let p = mesh.vertices()[v];
        out.write_record(&[v.to_string(), p[0].to_string(), p[1].to_string(), y[v].to_string()])?;
    }
    out.flush()
}

/// Reads boundary values onto `mesh`; interior entries are zero. Every
/// boundary vertex must be listed at its own coordinates.
pub fn read_measurements(path: &Path, mesh: &TriMesh) -> Result<Vec<f64>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format_err(path, 0, e.to_string()))?;
    let mut values = vec![0.0; mesh.num_vertices()];
    let mut seen = vec![false; mesh.num_vertices()];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(path, line, e.to_string()))?;
        if rec.len() != 4 {
            return Err(format_err(path, line, "expected vertex,x,y,value"));
        }
        let v: usize = rec[0].parse().map_err(|_| format_err(path, line, "bad vertex index"))?;
        let num = |j: usize| -> Result<f64, CliError> {
            rec[j].parse().map_err(|_| format_err(path, line, format!("cannot parse {:?}", &rec[j])))
        };
        let (x, y, val) = (num(1)?, num(2)?, num(3)?);
        if v >= mesh.num_vertices() || !mesh.is_boundary_vertex(v) {
            return Err(format_err(path, line, format!("vertex {v} is not a boundary vertex")));
        }
        let p = mesh.vertices()[v];
        if (p[0] - x).abs() > 1e-9 || (p[1] - y).abs() > 1e-9 {
            return Err(format_err(path, line, format!("vertex {v} is not at ({x}, {y})")));
        }
        values[v] = val;
        seen[v] = true;
    }
    if let Some(v) = mesh.boundary_vertices().into_iter().find(|&v| !seen[v]) {
        return Err(format_err(path, 0, format!("boundary vertex {v} missing")));
    }
    Ok(values)
}

/// Closed polylines, rows `loop,x,y`, each loop repeating its first point.
pub fn write_polygon(w: &mut dyn Write, loops: &[Vec<Point>]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["loop", "x", "y"])?;
    for (l, pts) in loops.iter().enumerate() {
        for p in pts.iter().chain(pts.first()) {
            out.write_record(&[l.to_string(), p[0].to_string(), p[1].to_string()])?;
        }
    }
    out.flush()
}

pub fn read_polygon(path: &Path) -> Result<Vec<Vec<Point>>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format_err(path, 0, e.to_string()))?;
    let mut loops: Vec<Vec<Point>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(path, line, e.to_string()))?;
        if rec.len() != 3 {
            return Err(format_err(path, line, "expected loop,x,y"));
        }
        let l: usize = rec[0].parse().map_err(|_| format_err(path, line, "bad loop index"))?;
        let x: f64 = rec[1].parse().map_err(|_| format_err(path, line, "bad x"))?;
        let y: f64 = rec[2].parse().map_err(|_| format_err(path, line, "bad y"))?;
        if l == loops.len() {
            loops.push(Vec::new());
        } else if l + 1 != loops.len() {
            return Err(format_err(path, line, "loops must be contiguous and numbered from 0"));
        }
        loops[l].push([x, y]);
    }
    for pts in &mut loops {
        if pts.len() >= 2 && pts.first() == pts.last() {
            pts.pop();
        }
    }
    Ok(loops)
}
