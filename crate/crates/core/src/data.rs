//! Synthetic measurements: phantoms, truth-mesh solves, transfer to the
//! working mesh, noise, and reconstruction metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::fem::{assemble_boundary_mass, centroid_values, interpolate_nodal, CoefficientPair, NodalField};
use crate::forward::{segment_distance, ForwardProblem, DEFAULT_NEWTON_TOL};
use crate::math::{self, Point};
use crate::mesh::{build_rectangle_mesh, refine, AdaptationMarking, MeshPattern, PointLocator, TriMesh};
use crate::objective::Measurement;

/// Geometric primitive of a phantom.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disc { center: Point, radius: f64 },
    /// Semi-axes `(a, b)` rotated counterclockwise by `angle` radians.
    Ellipse { center: Point, semi_axes: [f64; 2], angle: f64 },
    /// Axis-aligned, lower-left `corner` and positive `extents`.
    Rectangle { corner: Point, extents: [f64; 2] },
    /// Simple polygon, counterclockwise.
    Polygon { vertices: Vec<Point> },
}

impl Shape {
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Shape::Disc { center, radius } => math::dist(p, *center) < *radius,
            Shape::Ellipse { center, semi_axes, angle } => {
                let d = math::sub(p, *center);
                let (s, c) = (math::sin(*angle), math::cos(*angle));
                let x = c * d[0] + s * d[1];
                let y = -s * d[0] + c * d[1];
                let (a, b) = (x / semi_axes[0], y / semi_axes[1]);
                a * a + b * b < 1.0
            }
            Shape::Rectangle { corner, extents } => {
                p[0] > corner[0]
                    && p[0] < corner[0] + extents[0]
                    && p[1] > corner[1]
                    && p[1] < corner[1] + extents[1]
            }
            Shape::Polygon { vertices } => point_in_polygon(vertices, p),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Shape::Disc { radius, .. } => PI * radius * radius,
            Shape::Ellipse { semi_axes, .. } => PI * semi_axes[0] * semi_axes[1],
            Shape::Rectangle { extents, .. } => extents[0] * extents[1],
            Shape::Polygon { vertices } => polygon_area(vertices).abs(),
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Point, Point) {
        match self {
            Shape::Disc { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
            Shape::Ellipse { center, semi_axes, angle } => {
                let (s, c) = (math::sin(*angle), math::cos(*angle));
                let (a, b) = (semi_axes[0], semi_axes[1]);
                let wx = math::sqrt(a * a * c * c + b * b * s * s);
                let wy = math::sqrt(a * a * s * s + b * b * c * c);
                ([center[0] - wx, center[1] - wy], [center[0] + wx, center[1] + wy])
            }
            Shape::Rectangle { corner, extents } => {
                (*corner, [corner[0] + extents[0], corner[1] + extents[1]])
            }
            Shape::Polygon { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for d in 0..2 {
                        lo[d] = lo[d].min(v[d]);
                        hi[d] = hi[d].max(v[d]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Counterclockwise points on the boundary, `n` of them for curved
    /// shapes; corners are always included for polygons and rectangles.
    pub fn boundary_points(&self, n: usize) -> Vec<Point> {
        let n = n.max(3);
        match self {
            Shape::Disc { center, radius } => (0..n)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    [center[0] + radius * math::cos(t), center[1] + radius * math::sin(t)]
                })
                .collect(),
            Shape::Ellipse { center, semi_axes, angle } => {
                let (s, c) = (math::sin(*angle), math::cos(*angle));
                (0..n)
                    .map(|i| {
                        let t = 2.0 * PI * i as f64 / n as f64;
                        let x = semi_axes[0] * math::cos(t);
                        let y = semi_axes[1] * math::sin(t);
                        [center[0] + c * x - s * y, center[1] + s * x + c * y]
                    })
                    .collect()
            }
            Shape::Rectangle { corner, extents } => {
                let [x0, y0] = *corner;
                let (x1, y1) = (x0 + extents[0], y0 + extents[1]);
                resample_closed(&[[x0, y0], [x1, y0], [x1, y1], [x0, y1]], n)
            }
            Shape::Polygon { vertices } => resample_closed(vertices, n),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Disc { .. } => "disc",
            Shape::Ellipse { .. } => "ellipse",
            Shape::Rectangle { .. } => "rectangle",
            Shape::Polygon { .. } => "polygon",
        }
    }
}

/// Inserts points along the edges of a closed polygon so that the total is
/// roughly `n`, keeping the original corners.
fn resample_closed(corners: &[Point], n: usize) -> Vec<Point> {
    let m = corners.len();
    let per: f64 = (0..m).map(|i| math::dist(corners[i], corners[(i + 1) % m])).sum();
    let mut out = Vec::new();
    for i in 0..m {
        let (a, b) = (corners[i], corners[(i + 1) % m]);
        let k = ((math::dist(a, b) / per * n as f64) as usize).max(1);
        for j in 0..k {
            let t = j as f64 / k as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Signed area, positive for counterclockwise orientation.
pub fn polygon_area(v: &[Point]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| math::cross(v[i], v[(i + 1) % n])).sum::<f64>()
}

pub fn point_in_polygon(v: &[Point], p: Point) -> bool {
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Ground-truth inclusion: a union of disjoint shapes kept at distance `d0`
/// from the boundary of the rectangular domain `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub shapes: Vec<Shape>,
}

impl Phantom {
    pub fn empty() -> Self {
        Phantom { shapes: Vec::new() }
    }

    pub fn new(shapes: Vec<Shape>, lo: Point, hi: Point, d0: f64) -> Result<Self> {
        for (i, s) in shapes.iter().enumerate() {
            let valid = match s {
                Shape::Disc { radius, .. } => *radius > 0.0,
                Shape::Ellipse { semi_axes, .. } => semi_axes[0] > 0.0 && semi_axes[1] > 0.0,
                Shape::Rectangle { extents, .. } => extents[0] > 0.0 && extents[1] > 0.0,
                Shape::Polygon { vertices } => vertices.len() >= 3 && polygon_area(vertices) > 0.0,
            };
            if !valid {
                return Err(invalid(format!("shape {i} ({}) is degenerate", s.name())));
            }
            let (blo, bhi) = s.bounding_box();
            if blo[0] < lo[0] + d0 || blo[1] < lo[1] + d0 || bhi[0] > hi[0] - d0 || bhi[1] > hi[1] - d0 {
                return Err(invalid(format!(
                    "shape {i} ({}) comes closer than d0 = {d0} to the domain boundary",
                    s.name()
                )));
            }
        }
        for i in 0..shapes.len() {
            for j in 0..shapes.len() {
                if i != j && shapes[i].boundary_points(256).iter().any(|p| shapes[j].contains(*p)) {
                    return Err(invalid(format!("shapes {i} and {j} overlap")));
                }
            }
        }
        Ok(Phantom { shapes })
    }

    pub fn contains(&self, p: Point) -> bool {
        self.shapes.iter().any(|s| s.contains(p))
    }

    pub fn area(&self) -> f64 {
        self.shapes.iter().map(Shape::area).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Distance from `p` to the nearest shape boundary (sampled).
    pub fn boundary_distance(&self, p: Point, samples: &[Vec<Point>]) -> f64 {
        let mut best = f64::INFINITY;
        for pts in samples {
            let n = pts.len();
            for i in 0..n {
                best = best.min(segment_distance(p, pts[i], pts[(i + 1) % n]));
            }
        }
        best
    }
}

/// Elementwise indicator (centroid inside) and nodal indicator (vertex
/// inside) of the phantom.
pub fn rasterize(phantom: &Phantom, mesh: &TriMesh) -> (Vec<f64>, NodalField) {
    let elem = (0..mesh.num_triangles())
        .map(|t| if phantom.contains(mesh.centroid(t)) { 1.0 } else { 0.0 })
        .collect();
    let nodal = mesh
        .vertices()
        .iter()
        .map(|p| if phantom.contains(*p) { 1.0 } else { 0.0 })
        .collect();
    (elem, NodalField::new(mesh, nodal).expect("finite indicator"))
}

/// Source term of one experiment, evaluated pointwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceTerm {
    /// `f(x, y) = a x + b y + c`
    Affine { a: f64, b: f64, c: f64 },
}

impl SourceTerm {
    pub const X: SourceTerm = SourceTerm::Affine { a: 1.0, b: 0.0, c: 0.0 };
    pub const Y: SourceTerm = SourceTerm::Affine { a: 0.0, b: 1.0, c: 0.0 };

    pub fn constant(c: f64) -> Self {
        SourceTerm::Affine { a: 0.0, b: 0.0, c }
    }

    pub fn eval(&self, p: Point) -> f64 {
        match *self {
            SourceTerm::Affine { a, b, c } => a * p[0] + b * p[1] + c,
        }
    }

    pub fn on(&self, mesh: &TriMesh) -> NodalField {
        interpolate_nodal(mesh, |p| self.eval(p)).expect("affine source is finite")
    }

    pub fn describe(&self) -> String {
        match *self {
            SourceTerm::Affine { a, b, c } => format!("{a}*x + {b}*y + {c}"),
        }
    }
}

/// Working-mesh measurements with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub measurements: Vec<Measurement>,
    pub sources: Vec<SourceTerm>,
    pub noise_level: f64,
    /// Realised relative noise `|eta| / |y|` in the boundary L2 norm, per source.
    pub realised_noise: Vec<f64>,
}

/// Anything able to produce boundary data on a given working mesh. Used to
/// remeasure after mesh adaptation.
pub trait MeasurementSource {
    fn measure(&self, mesh: &TriMesh) -> Result<MeasurementSet>;
}

/// Truth-mesh states for a phantom, reusable for any working mesh.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub truth_mesh: TriMesh,
    pub phantom: Phantom,
    pub sources: Vec<SourceTerm>,
    pub states: Vec<NodalField>,
    pub k: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl SyntheticData {
    /// Solves the direct problem for each source on `truth_mesh` with the
    /// elementwise phantom indicator as coefficient field.
    pub fn new(
        phantom: &Phantom,
        truth_mesh: TriMesh,
        sources: &[SourceTerm],
        k: f64,
        noise_level: f64,
        seed: u64,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(invalid("at least one source is required"));
        }
        if !(noise_level >= 0.0 && noise_level.is_finite()) {
            return Err(invalid("noise level must be non-negative"));
        }
        let (chi, _) = rasterize(phantom, &truth_mesh);
        let coeffs = CoefficientPair::from_elementwise(&chi, k);
        let mut states = Vec::with_capacity(sources.len());
        for s in sources {
            let f = s.on(&truth_mesh);
            let problem = ForwardProblem::new(&truth_mesh, coeffs.clone(), f.values())?;
            states.push(problem.solve(None, DEFAULT_NEWTON_TOL)?.y);
        }
        Ok(SyntheticData {
            truth_mesh,
            phantom: phantom.clone(),
            sources: sources.to_vec(),
            states,
            k,
            noise_level,
            seed,
        })
    }
}

impl MeasurementSource for SyntheticData {
    fn measure(&self, mesh: &TriMesh) -> Result<MeasurementSet> {
        let locator = PointLocator::new(&self.truth_mesh);
        let boundary = mesh.boundary_vertices();
        let mb = assemble_boundary_mass(mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut measurements = Vec::new();
        let mut realised = Vec::new();
        for (s, y) in self.sources.iter().zip(&self.states) {
            let mut vals = vec![0.0; mesh.num_vertices()];
            for &v in &boundary {
                vals[v] = locator.evaluate(y.values(), mesh.vertices()[v])?;
            }
            let rel = add_noise(&mut vals, &boundary, &mb, self.noise_level, &mut rng);
            realised.push(rel);
            measurements.push(Measurement {
                f: s.on(mesh),
                y_meas: NodalField::new(mesh, vals)?,
            });
        }
        Ok(MeasurementSet {
            measurements,
            sources: self.sources.clone(),
            noise_level: self.noise_level,
            realised_noise: realised,
        })
    }
}

/// Adds `delta |y|_b xi / |xi|_b` with Gaussian `xi` on boundary vertices and
/// returns the realised relative perturbation.
fn add_noise(vals: &mut [f64], boundary: &[usize], mb: &crate::CsrMatrix, delta: f64, rng: &mut ChaCha8Rng) -> f64 {
    if delta == 0.0 {
        return 0.0;
    }
    let mut xi = vec![0.0; vals.len()];
    for &v in boundary {
        xi[v] = StandardNormal.sample(rng);
    }
    let ynorm = math::sqrt(mb.bilinear(vals, vals));
    let xnorm = math::sqrt(mb.bilinear(&xi, &xi));
    let c = delta * ynorm / xnorm;
    let mut eta = vec![0.0; vals.len()];
    for &v in boundary {
        eta[v] = c * xi[v];
        vals[v] += eta[v];
    }
    math::sqrt(mb.bilinear(&eta, &eta)) / ynorm
}

/// Boundary data read from files: values at boundary points of some mesh,
/// interpolated linearly along the boundary onto new meshes.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub mesh: TriMesh,
    pub sources: Vec<SourceTerm>,
    pub values: Vec<Vec<f64>>,
    pub noise_level: f64,
}

impl MeasurementSource for BoundaryData {
    fn measure(&self, mesh: &TriMesh) -> Result<MeasurementSet> {
        let old = &self.mesh;
        let ov = old.vertices();
        let mut measurements = Vec::new();
        for (s, vals) in self.sources.iter().zip(&self.values) {
            let mut out = vec![0.0; mesh.num_vertices()];
            for v in mesh.boundary_vertices() {
                let p = mesh.vertices()[v];
                let mut best = (f64::INFINITY, 0.0);
                for e in old.boundary_edges() {
                    let (a, b) = (ov[e[0]], ov[e[1]]);
                    let d = segment_distance(p, a, b);
                    if d < best.0 {
                        let ab = math::sub(b, a);
                        let t = (math::dot(math::sub(p, a), ab) / math::dot(ab, ab)).clamp(0.0, 1.0);
                        best = (d, (1.0 - t) * vals[e[0]] + t * vals[e[1]]);
                    }
                }
                if best.0 > 1e-9 * old.h_max().max(1.0) {
                    return Err(Error::OutsideDomain { x: p[0], y: p[1] });
                }
                out[v] = best.1;
            }
            measurements.push(Measurement {
                f: s.on(mesh),
                y_meas: NodalField::new(mesh, out)?,
            });
        }
        Ok(MeasurementSet {
            measurements,
            sources: self.sources.clone(),
            noise_level: self.noise_level,
            realised_noise: vec![self.noise_level; self.sources.len()],
        })
    }
}

/// Truth mesh: the working resolution divided by `factor` everywhere, plus
/// one refinement of the elements crossed by a phantom boundary.
pub fn build_truth_mesh(pattern: MeshPattern, lo: Point, hi: Point, h_work: f64, factor: f64, phantom: &Phantom) -> Result<TriMesh> {
    if !(factor >= 1.0) {
        return Err(invalid("truth mesh factor must be at least 1"));
    }
    let mesh = build_rectangle_mesh(pattern, lo, hi, h_work / factor)?;
    if phantom.is_empty() {
        return Ok(mesh);
    }
    let samples: Vec<Vec<Point>> = phantom.shapes.iter().map(|s| s.boundary_points(1024)).collect();
    let marked: Vec<usize> = (0..mesh.num_triangles())
        .filter(|&t| phantom.boundary_distance(mesh.centroid(t), &samples) < mesh.diameter(t))
        .collect();
    refine(&mesh, &AdaptationMarking::refine_only(marked))
}

/// Convenience wrapper: truth solve plus transfer to `work_mesh`.
pub fn generate_measurements(
    phantom: &Phantom,
    truth_mesh: &TriMesh,
    work_mesh: &TriMesh,
    sources: &[SourceTerm],
    k: f64,
    noise_level: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    SyntheticData::new(phantom, truth_mesh.clone(), sources, k, noise_level, seed)?.measure(work_mesh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionMetrics {
    /// `|{u >= 1/2} xor omega| / |omega|`, or over the domain area when the
    /// phantom is empty.
    pub sym_diff_ratio: f64,
    pub sym_diff_area: f64,
    pub true_area: f64,
    pub reconstructed_area: f64,
}

/// Elementwise comparison of `{u >= 1/2}` (centroid value) with the phantom
/// (centroid inside).
pub fn reconstruction_error(u_rec: &NodalField, phantom: &Phantom, mesh: &TriMesh) -> Result<ReconstructionMetrics> {
    u_rec.check(mesh)?;
    let ubar = centroid_values(mesh, u_rec.values());
    let (mut diff, mut truth, mut rec) = (0.0, 0.0, 0.0);
    for t in 0..mesh.num_triangles() {
        let a = mesh.area(t);
        let r = ubar[t] >= 0.5;
        let w = phantom.contains(mesh.centroid(t));
        if r != w {
            diff += a;
        }
        if w {
            truth += a;
        }
        if r {
            rec += a;
        }
    }
    let denom = if phantom.is_empty() { mesh.total_area() } else { truth };
    Ok(ReconstructionMetrics {
        sym_diff_ratio: diff / denom,
        sym_diff_area: diff,
        true_area: truth,
        reconstructed_area: rec,
    })
}

/// Number of edge-connected components of the elements with centroid value
/// at least `level`.
pub fn count_components(mesh: &TriMesh, u: &[f64], level: f64) -> usize {
    count_element_components(mesh, &centroid_values(mesh, u), level)
}

/// Number of edge-connected components of the elements whose value in
/// `ubar` is at least `level`.
pub fn count_element_components(mesh: &TriMesh, ubar: &[f64], level: f64) -> usize {
    let nb = mesh.neighbors();
    let mut seen = vec![false; mesh.num_triangles()];
    let mut count = 0;
    for start in 0..mesh.num_triangles() {
        if seen[start] || ubar[start] < level {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(t) = stack.pop() {
            for s in nb[t].iter().flatten() {
                if !seen[*s] && ubar[*s] >= level {
                    seen[*s] = true;
                    stack.push(*s);
                }
            }
        }
    }
    count
}

/// Mean radial distance between the level sets `u = 0.1` and `u = 0.9`
/// along `rays` rays from `center`, for a field close to 1 inside. Rays
/// without both crossings are skipped; `None` if no ray has them.
pub fn interface_width(mesh: &TriMesh, u: &NodalField, center: Point, r_max: f64, rays: usize) -> Result<Option<f64>> {
    u.check(mesh)?;
    let locator = PointLocator::new(mesh);
    let steps = 4000;
    let dr = r_max / steps as f64;
    let mut total = 0.0;
    let mut used = 0;
    for k in 0..rays {
        let th = 2.0 * PI * (k as f64 + 0.5) / rays as f64;
        let dir = [math::cos(th), math::sin(th)];
        let mut prev = locator.evaluate(u.values(), center)?;
        let (mut r9, mut r1) = (None, None);
        for s in 1..=steps {
            let r = s as f64 * dr;
            let p = math::add(center, math::scale(dir, r));
            let Ok(val) = locator.evaluate(u.values(), p) else { break };
            if r9.is_none() && prev >= 0.9 && val < 0.9 {
                r9 = Some(r - dr * (0.9 - val) / (prev - val));
            }
            if r1.is_none() && prev >= 0.1 && val < 0.1 {
                r1 = Some(r - dr * (0.1 - val) / (prev - val));
            }
            prev = val;
        }
        if let (Some(a), Some(b)) = (r9, r1) {
            total += b - a;
            used += 1;
        }
    }
    Ok(if used > 0 { Some(total / used as f64) } else { None })
}
