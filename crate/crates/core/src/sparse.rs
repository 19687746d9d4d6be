//! Compressed sparse row matrices and a preconditioned conjugate gradient
//! solver.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::mesh::SparsityPattern;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl CsrMatrix {
    /// Column indices within each row must be strictly increasing.
    pub fn new(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
        symmetric: bool,
    ) -> Result<Self> {
        if row_ptr.len() != n + 1 || col_idx.len() != values.len() || row_ptr[n] != values.len() {
            return Err(Error::InvalidInput("inconsistent CSR arrays".into()));
        }
        for i in 0..n {
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&j| j >= n) {
                return Err(Error::InvalidInput("CSR row is unsorted or out of range".into()));
            }
        }
        Ok(CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
            symmetric,
        })
    }

    pub fn from_pattern(pattern: &SparsityPattern, values: Vec<f64>, symmetric: bool) -> Self {
        debug_assert_eq!(values.len(), pattern.col_idx.len());
        CsrMatrix {
            n: pattern.row_ptr.len() - 1,
            row_ptr: pattern.row_ptr.clone(),
            col_idx: pattern.col_idx.clone(),
            values,
            symmetric,
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        CsrMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
            symmetric: true,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    /// Keeps the nonzero entries of a dense row-major matrix.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        let mut m = CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        };
        m.symmetric = m.symmetry_error() == 0.0;
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        math::dot_slices(x, &self.mul_vec(y))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// `self + s * other`; both must share the sparsity pattern.
    pub fn add_scaled(&self, s: f64, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.row_ptr != other.row_ptr || self.col_idx != other.col_idx {
            return Err(Error::InvalidInput("sparsity patterns differ".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + s * b)
            .collect();
        Ok(CsrMatrix {
            values,
            symmetric: self.symmetric && other.symmetric,
            ..self.clone()
        })
    }

    /// Adds `d` to the diagonal, which must be structurally present.
    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, di) in d.iter().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let k = self.col_idx[r.clone()]
                .binary_search(&i)
                .expect("diagonal entry in pattern");
            self.values[r.start + k] += di;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// Largest `|a_ij - a_ji|` over the stored entries.
    /// `64 eps | |A| |x| + |b| |`, the residual size below which rounding
    /// dominates.
    pub fn rounding_floor(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let mut v = b[i].abs();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                v += (self.values[k] * x[self.col_idx[k]]).abs();
            }
            s += v * v;
        }
        64.0 * f64::EPSILON * math::sqrt(s)
    }

    pub fn symmetry_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Same matrix without stored zeros.
    pub fn pruned(&self) -> CsrMatrix {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            col_idx,
            values,
            symmetric: self.symmetric,
        }
    }

    /// Principal submatrix on the sorted index set `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> CsrMatrix {
        let mut local = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            local[i] = k;
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &i in idx {
            for (j, v) in self.row(i) {
                if local[j] != usize::MAX {
                    col_idx.push(local[j]);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        CsrMatrix {
            n: idx.len(),
            row_ptr,
            col_idx,
            values,
            symmetric: self.symmetric,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Anything that approximately applies `A^{-1}`.
pub trait Precondition {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Incomplete Cholesky factor with the sparsity of the lower triangle of
/// `a`. Pivots that lose positivity trigger a restart with the diagonal
/// scaled up; after a few failed shifts the factor degrades to Jacobi.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// Strictly lower entries, row by row.
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl Preconditioner {
    pub fn ic0(a: &CsrMatrix) -> Self {
        let n = a.n;
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut base = Vec::new();
        let mut adiag = vec![0.0; n];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j < i {
                    col_idx.push(j);
                    base.push(v);
                } else if j == i {
                    adiag[i] = v;
                }
            }
            row_ptr.push(col_idx.len());
        }
        let mut shift = 0.0;
        for _ in 0..6 {
            if let Some((lower, diag)) = factor_ic0(&row_ptr, &col_idx, &base, &adiag, shift) {
                return Preconditioner { row_ptr, col_idx, lower, diag };
            }
            shift = if shift == 0.0 { 1e-3 } else { 10.0 * shift };
        }
        Self::jacobi(a)
    }

    pub fn jacobi(a: &CsrMatrix) -> Self {
        let diag = a
            .diagonal()
            .iter()
            .map(|&d| if d > 0.0 { math::sqrt(d) } else { 1.0 })
            .collect();
        Preconditioner {
            row_ptr: vec![0; a.n + 1],
            col_idx: Vec::new(),
            lower: Vec::new(),
            diag,
        }
    }

}

impl Precondition for Preconditioner {
    /// `z = (L L^T)^{-1} r`
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.diag.len();
        for i in 0..n {
            let mut v = r[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                v -= self.lower[k] * z[self.col_idx[k]];
            }
            z[i] = v / self.diag[i];
        }
        for i in (0..n).rev() {
            z[i] /= self.diag[i];
            let zi = z[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                z[self.col_idx[k]] -= self.lower[k] * zi;
            }
        }
    }
}

fn factor_ic0(
    row_ptr: &[usize],
    col_idx: &[usize],
    base: &[f64],
    adiag: &[f64],
    shift: f64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = adiag.len();
    let mut lower = base.to_vec();
    let mut diag = vec![0.0; n];
    for i in 0..n {
        let (s, e) = (row_ptr[i], row_ptr[i + 1]);
        for p in s..e {
            let k = col_idx[p];
            // sparse dot of rows i and k over columns < k
            let (mut a, mut b) = (s, row_ptr[k]);
            let (ea, eb) = (p, row_ptr[k + 1]);
            let mut acc = 0.0;
            while a < ea && b < eb {
                let (ca, cb) = (col_idx[a], col_idx[b]);
                if ca == cb {
                    acc += lower[a] * lower[b];
                    a += 1;
                    b += 1;
                } else if ca < cb {
                    a += 1;
                } else {
                    b += 1;
                }
            }
            lower[p] = (lower[p] - acc) / diag[k];
        }
        let sq: f64 = lower[s..e].iter().map(|v| v * v).sum();
        let piv = adiag[i] * (1.0 + shift) - sq;
        if !(piv > 0.0) || !piv.is_finite() {
            return None;
        }
        diag[i] = math::sqrt(piv);
    }
    Some((lower, diag))
}

/// Preconditioned conjugate gradients for symmetric positive definite `a`
/// with an incomplete Cholesky preconditioner, stopping when
/// `|b - a x| <= tol |b|` or when the residual reaches the rounding floor
/// `64 eps | |a| |x| + |b| |`. The iteration cap is `10 * dim`.
pub fn pcg(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, tol: f64) -> Result<PcgOutcome> {
    if b.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.len(),
        });
    }
    pcg_with(a, &Preconditioner::ic0(a), b, x0, tol, 10 * a.dim().max(1))
}

/// Preconditioned conjugate gradients with at most `max_iter` iterations.
pub fn pcg_with(
    a: &CsrMatrix,
    pre: &dyn Precondition,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<PcgOutcome> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let bnorm = math::norm2(b);
    if bnorm == 0.0 {
        return Ok(PcgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        _ => vec![0.0; n],
    };
    let cap = max_iter;
    let mut total = 0;
    let mut ap = vec![0.0; n];
    let mut z = vec![0.0; n];
    // restarts guard against drift of the recursive residual
    for _ in 0..4 {
        a.mul_vec_into(&x, &mut ap);
        let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
        let mut rn = math::norm2(&r);
        let target = (tol * bnorm).max(a.rounding_floor(&x, b));
        if rn <= target {
            return Ok(PcgOutcome {
                x,
                iterations: total,
                relative_residual: rn / bnorm,
            });
        }
        pre.apply(&r, &mut z);
        let mut p = z.clone();
        let mut rz = math::dot_slices(&r, &z);
        while total < cap {
            total += 1;
            a.mul_vec_into(&p, &mut ap);
            let pap = math::dot_slices(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Breakdown { iteration: total });
            }
            let alpha = rz / pap;
            math::axpy(alpha, &p, &mut x);
            math::axpy(-alpha, &ap, &mut r);
            rn = math::norm2(&r);
            if rn <= 0.5 * target {
                break;
            }
            pre.apply(&r, &mut z);
            let rz_new = math::dot_slices(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if total >= cap {
            break;
        }
    }
    a.mul_vec_into(&x, &mut ap);
    let res = b
        .iter()
        .zip(&ap)
        .map(|(bi, ai)| (bi - ai) * (bi - ai))
        .sum::<f64>();
    let rel = math::sqrt(res) / bnorm;
    if rel <= tol || math::sqrt(res) <= a.rounding_floor(&x, b) {
        Ok(PcgOutcome {
            x,
            iterations: total,
            relative_residual: rel,
        })
    } else {
        Err(Error::NotConverged {
            method: "pcg",
            iterations: total,
            residual: rel,
        })
    }
}

/// Solves `a x = b` to relative residual `tol`.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    pcg(a, b, None, tol).map(|o| o.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    l[i][i] = libm::sqrt(a[i][i] - s);
                } else {
                    l[i][j] = (a[i][j] - s) / l[j][j];
                }
            }
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
        }
        x
    }

    #[test]
    fn identity_returns_rhs() {
        let b = vec![1.0, -2.0, 3.5];
        let x = solve_spd(&CsrMatrix::identity(3), &b, 1e-14).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn diagonal_two_by_two() {
        let a = CsrMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 4.0]]);
        let x = solve_spd(&a, &[2.0, 4.0], 1e-14).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_spd_matches_dense_cholesky() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let g: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| g[i][k] * g[j][k]).sum::<f64>();
            }
            a[i][i] += 1.0;
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let oracle = cholesky_solve(&a, &b);
        let x = solve_spd(&CsrMatrix::from_dense(&a), &b, 1e-13).unwrap();
        for i in 0..n {
            assert!((x[i] - oracle[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn indefinite_breaks_down() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        assert!(solve_spd(&a, &[0.0, 1.0], 1e-12).is_err());
    }

    #[test]
    fn submatrix_and_pruned() {
        let a = CsrMatrix::from_dense(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 4.0, 1.0],
            vec![0.0, 1.0, 4.0],
        ]);
        let s = a.submatrix(&[0, 2]);
        assert_eq!(s.dim(), 2);
        assert_eq!(s.get(0, 0), 4.0);
        assert_eq!(s.get(0, 1), 0.0);
        let mut z = a.clone();
        z.scale(0.0);
        assert_eq!(z.pruned().nnz(), 0);
    }

    proptest! {
        #[test]
        fn tridiagonal_residual_below_tolerance(d in proptest::collection::vec(2.5f64..10.0, 2..40)) {
            let n = d.len();
            let mut rows = vec![vec![0.0; n]; n];
            for i in 0..n {
                rows[i][i] = d[i];
                if i + 1 < n {
                    rows[i][i + 1] = -1.0;
                    rows[i + 1][i] = -1.0;
                }
            }
            let a = CsrMatrix::from_dense(&rows);
            let b: Vec<f64> = (0..n).map(|i| libm::sin(i as f64) + 0.1).collect();
            let x = solve_spd(&a, &b, 1e-12).unwrap();
            let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
            prop_assert!(math::norm2(&r) <= 1e-12 * math::norm2(&b));
        }
    }
}
