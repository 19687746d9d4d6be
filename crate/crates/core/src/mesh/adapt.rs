//! Gradient-driven marking and rebuild-from-base adaptation.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::{refine, AdaptationMarking, PointLocator, TriMesh};
use crate::error::{invalid, Result};
use crate::fem::{element_gradient, NodalField};
use crate::math;

/// Elementwise `|grad u|` of a P1 field.
pub fn element_gradient_norms(mesh: &TriMesh, u: &[f64]) -> Vec<f64> {
    (0..mesh.num_triangles())
        .map(|t| math::norm(element_gradient(mesh, t, u)))
        .collect()
}

/// Marks the top `refine_frac` of triangles by `|grad u|` for refinement and
/// those below the `coarsen_frac` quantile (or with vanishing gradient) as
/// coarsening candidates. When all gradients are equal nothing is refined.
pub fn mark_by_gradient(
    mesh: &TriMesh,
    u: &NodalField,
    refine_frac: f64,
    coarsen_frac: f64,
) -> Result<AdaptationMarking> {
    u.check(mesh)?;
    if !(0.0..=1.0).contains(&refine_frac) || !(0.0..=1.0).contains(&coarsen_frac) {
        return Err(invalid("refine_frac and coarsen_frac must lie in [0, 1]"));
    }
    let g = element_gradient_norms(mesh, u.values());
    let n = g.len();
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    let gmax = g.iter().copied().fold(0.0, f64::max);
    let flat_tol = 1e-12 * gmax.max(1.0);
    let mut refine_set = Vec::new();
    let count = math::floor(refine_frac * n as f64) as usize;
    if count > 0 && gmax - gmin > flat_tol {
        let mut sorted = g.clone();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        let t = sorted[count - 1];
        refine_set = (0..n).filter(|&i| g[i] >= t && g[i] > gmin + flat_tol).collect();
    }
    let mut coarsen_set = Vec::new();
    let ccount = math::floor(coarsen_frac * n as f64) as usize;
    if ccount > 0 {
        let mut sorted = g.clone();
        sorted.sort_unstable_by(|a, b| a.total_cmp(b));
        let tc = sorted[ccount - 1];
        let chosen: BTreeSet<usize> = refine_set.iter().copied().collect();
        coarsen_set = (0..n)
            .filter(|i| !chosen.contains(i))
            .filter(|&i| g[i] < tc || g[i] <= flat_tol)
            .collect();
    }
    Ok(AdaptationMarking {
        refine_set,
        coarsen_set,
    })
}

/// Parameters of [`adapt_to_field`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptParams {
    /// Fraction of elements (by gradient) that define the refinement region.
    pub refine_frac: f64,
    /// Target longest edge inside the refinement region.
    pub h_fine: f64,
    /// Maximum number of refinement sweeps applied to the base mesh.
    pub max_levels: usize,
}

impl Default for AdaptParams {
    fn default() -> Self {
        AdaptParams {
            refine_frac: 0.2,
            h_fine: 0.01,
            max_levels: 8,
        }
    }
}

/// Builds a new mesh from `base`, refined down to `h_fine` where `u` (given
/// on `current`) has large gradients. Regions where `u` is flat revert to the
/// base resolution, which is how coarsening happens.
pub fn adapt_to_field(
    base: &TriMesh,
    current: &TriMesh,
    u: &NodalField,
    params: &AdaptParams,
) -> Result<TriMesh> {
    if !(params.h_fine > 0.0) {
        return Err(invalid("h_fine must be positive"));
    }
    let marking = mark_by_gradient(current, u, params.refine_frac, 0.0)?;
    let mut region = vec![false; current.num_triangles()];
    for &t in &marking.refine_set {
        region[t] = true;
    }
    // one ring of dilation through shared vertices
    let mut hot_vertex = vec![false; current.num_vertices()];
    for (t, tri) in current.triangles().iter().enumerate() {
        if region[t] {
            for &v in tri {
                hot_vertex[v] = true;
            }
        }
    }
    for (t, tri) in current.triangles().iter().enumerate() {
        if tri.iter().any(|&v| hot_vertex[v]) {
            region[t] = true;
        }
    }
    let locator = PointLocator::new(current);
    let in_region = |p| locator.locate(p).map(|l| region[l.triangle]).unwrap_or(false);

    let mut mesh = base.clone();
    for _ in 0..params.max_levels {
        let marked: Vec<usize> = (0..mesh.num_triangles())
            .filter(|&t| mesh.diameter(t) > params.h_fine * (1.0 + 1e-9))
            .filter(|&t| {
                let c = mesh.corners(t);
                in_region(mesh.centroid(t)) || c.iter().any(|p| in_region(*p))
            })
            .collect();
        if marked.is_empty() {
            break;
        }
        mesh = refine(&mesh, &AdaptationMarking::refine_only(marked))?;
    }
    Ok(mesh)
}
