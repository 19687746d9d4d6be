//! Sparse Cholesky factorization (up-looking, elimination-tree driven) and
//! a coordinate-based nested dissection ordering for mesh graphs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Point};
use crate::sparse::{pcg_with, CsrMatrix, Precondition};

const NONE: usize = usize::MAX;

/// `P A P^T = L L^T` with `L` stored by columns, diagonal first.
#[derive(Debug, Clone)]
pub struct Cholesky {
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Cholesky {
    /// Factors the symmetric positive definite `a` in the order `perm`
    /// (`perm[new] = old`).
    pub fn factor(a: &CsrMatrix, perm: &[usize]) -> Result<Self> {
        let n = a.dim();
        if perm.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: perm.len() });
        }
        let mut inv = vec![NONE; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inv[old] != NONE {
                return Err(Error::InvalidInput("ordering is not a permutation".into()));
            }
            inv[old] = new;
        }
        // upper part of column k of the permuted matrix = row perm[k] of `a`
        // restricted to permuted indices <= k
        let column = |k: usize| a.row(perm[k]).map(|(j, v)| (inv[j], v)).filter(move |&(i, _)| i <= k);

        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for (mut i, _) in column(k) {
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        let mut flag = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = ereach(k, column(k).map(|(i, _)| i), &parent, &mut flag, &mut stack);
            for &i in &stack[top..] {
                counts[i] += 1;
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            col_ptr[k + 1] = col_ptr[k] + counts[k];
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut next: Vec<usize> = col_ptr[..n].iter().map(|p| p + 1).collect();
        let mut x = vec![0.0; n];
        flag.iter_mut().for_each(|f| *f = NONE);
        for k in 0..n {
            let top = ereach(k, column(k).map(|(i, _)| i), &parent, &mut flag, &mut stack);
            for (i, v) in column(k) {
                x[i] += v;
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / values[col_ptr[i]];
                x[i] = 0.0;
                for p in col_ptr[i] + 1..next[i] {
                    x[row_idx[p]] -= values[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                row_idx[p] = k;
                values[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Breakdown { iteration: k });
            }
            row_idx[col_ptr[k]] = k;
            values[col_ptr[k]] = math::sqrt(d);
        }
        Ok(Cholesky { perm: perm.to_vec(), col_ptr, row_idx, values })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn factor_nnz(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for j in 0..n {
            let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
            y[j] /= self.values[s];
            let yj = y[j];
            for p in s + 1..e {
                y[self.row_idx[p]] -= self.values[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
            let mut v = y[j];
            for p in s + 1..e {
                v -= self.values[p] * y[self.row_idx[p]];
            }
            y[j] = v / self.values[s];
        }
        let mut x = vec![0.0; n];
        for (i, &o) in self.perm.iter().enumerate() {
            x[o] = y[i];
        }
        x
    }

    /// Solve followed by one step of iterative refinement against `a`.
    pub fn solve_refined(&self, a: &CsrMatrix, b: &[f64]) -> Vec<f64> {
        let mut x = self.solve(b);
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let dx = self.solve(&r);
        math::axpy(1.0, &dx, &mut x);
        x
    }
}

impl Precondition for Cholesky {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(&self.solve(r));
    }
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal) in
/// topological order, returned as `stack[top..]`.
fn ereach(
    k: usize,
    entries: impl Iterator<Item = usize>,
    parent: &[usize],
    flag: &mut [usize],
    stack: &mut [usize],
) -> usize {
    let n = parent.len();
    let mut top = n;
    flag[k] = k;
    let mut path = Vec::new();
    for mut i in entries {
        path.clear();
        while i != NONE && flag[i] != k {
            path.push(i);
            flag[i] = k;
            i = parent[i];
        }
        for &v in path.iter().rev() {
            top -= 1;
            stack[top] = v;
        }
    }
    top
}

/// Factors an operator assembled on `mesh` using the mesh's fill-reducing
/// ordering.
pub fn factor_on_mesh(mesh: &crate::mesh::TriMesh, a: &CsrMatrix) -> Result<Cholesky> {
    Cholesky::factor(a, mesh.fill_ordering())
}

/// Direct solve of `a x = b` for an operator on `mesh`, with one refinement step.
pub fn solve_on_mesh(mesh: &crate::mesh::TriMesh, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.len() });
    }
    Ok(factor_on_mesh(mesh, a)?.solve_refined(a, b))
}

/// Iterations allowed before a cached factor is considered stale.
const REUSE_ITERS: usize = 12;

/// Solves `a x = b` to relative residual `tol`, reusing the factor in `slot`
/// (of a nearby operator) as a preconditioner; refactors and stores the new factor when it no longer
/// converges quickly.
pub fn solve_cached(
    mesh: &crate::mesh::TriMesh,
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    slot: &mut Option<Cholesky>,
) -> Result<Vec<f64>> {
    if b.len() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.len() });
    }
    if let Some(f) = slot.as_ref().filter(|f| f.dim() == a.dim()) {
        if let Ok(out) = pcg_with(a, f, b, None, tol, REUSE_ITERS) {
            return Ok(out.x);
        }
    }
    let f = factor_on_mesh(mesh, a)?;
    let x = f.solve_refined(a, b);
    *slot = Some(f);
    Ok(x)
}

/// Nested dissection by recursive median splits along the longer extent of
/// the vertex cloud; separator vertices are numbered last.
pub fn nested_dissection(points: &[Point], adjacency: &CsrMatrix) -> Vec<usize> {
    let n = points.len();
    let mut out = Vec::with_capacity(n);
    let mut side = vec![0u32; n];
    let mut stamp = 0u32;
    enum Task {
        Split(Vec<usize>),
        Emit(Vec<usize>),
    }
    let mut tasks = vec![Task::Split((0..n).collect())];
    while let Some(task) = tasks.pop() {
        let mut ids = match task {
            Task::Emit(ids) => {
                out.extend(ids);
                continue;
            }
            Task::Split(ids) => ids,
        };
        if ids.len() <= 32 {
            out.extend(ids);
            continue;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for &v in &ids {
            for d in 0..2 {
                lo[d] = lo[d].min(points[v][d]);
                hi[d] = hi[d].max(points[v][d]);
            }
        }
        let axis = if hi[0] - lo[0] >= hi[1] - lo[1] { 0 } else { 1 };
        let mid = ids.len() / 2;
        ids.select_nth_unstable_by(mid, |a, b| points[*a][axis].total_cmp(&points[*b][axis]));
        let right = ids.split_off(mid);
        stamp += 1;
        for &v in &right {
            side[v] = stamp;
        }
        let (sep, left): (Vec<usize>, Vec<usize>) = ids
            .into_iter()
            .partition(|&v| adjacency.row(v).any(|(j, _)| side[j] == stamp));
        // processed in reverse push order: left, right, then separator
        tasks.push(Task::Emit(sep));
        tasks.push(Task::Split(right));
        tasks.push(Task::Split(left));
    }
    out
}
