//! Primal-dual active set solver for box-constrained quadratic problems
//! `min 1/2 x^T A x - b^T x` subject to `lower <= x <= upper`.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::sparse::{pcg, CsrMatrix};

pub const MAX_ACTIVE_SET_ITERS: usize = 100;
const INNER_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct PdasProblem {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PdasProblem {
    pub fn unit_box(a: CsrMatrix, b: Vec<f64>) -> Self {
        let n = b.len();
        PdasProblem {
            a,
            b,
            lower: vec![0.0; n],
            upper: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `A x - b`, the multiplier of the bound constraints.
    pub fn multiplier(&self, x: &[f64]) -> Vec<f64> {
        let mut mu = self.a.mul_vec(x);
        for (m, bi) in mu.iter_mut().zip(&self.b) {
            *m -= bi;
        }
        mu
    }

    /// Worst violation of the optimality conditions, absolute:
    /// `|mu_i|` on inactive nodes, `max(-mu_i, 0)` at the lower bound and
    /// `max(mu_i, 0)` at the upper bound.
    pub fn complementarity_residual(&self, x: &[f64]) -> f64 {
        let mu = self.multiplier(x);
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            let r = if x[i] <= self.lower[i] {
                (-mu[i]).max(0.0)
            } else if x[i] >= self.upper[i] {
                mu[i].max(0.0)
            } else {
                mu[i].abs()
            };
            worst = worst.max(r);
        }
        worst
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * self.a.bilinear(x, x) - math::dot_slices(&self.b, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdasSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub active_low: Vec<usize>,
    pub active_high: Vec<usize>,
}

/// Runs the active set iteration from `x0` (or the clamped diagonal guess).
/// The active sets are predicted with `c_i = A_ii`.
pub fn solve_pdas(problem: &PdasProblem, x0: Option<&[f64]>) -> Result<PdasSolution> {
    let n = problem.dim();
    if problem.a.dim() != n || problem.lower.len() != n || problem.upper.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: problem.a.dim(),
        });
    }
    if problem.lower.iter().zip(&problem.upper).any(|(l, u)| l > u) {
        return Err(Error::InvalidInput("lower bound above upper bound".into()));
    }
    let c = problem.a.diagonal();
    if c.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidInput("matrix diagonal must be positive".into()));
    }
    let clamp = |i: usize, v: f64| v.clamp(problem.lower[i], problem.upper[i]);
    let mut x: Vec<f64> = match x0 {
        Some(x0) if x0.len() == n => (0..n).map(|i| clamp(i, x0[i])).collect(),
        _ => (0..n).map(|i| clamp(i, problem.b[i] / c[i])).collect(),
    };
    let mut mu = problem.multiplier(&x);
    let mut seen: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut prev: Option<Vec<u8>> = None;
    for iter in 1..=MAX_ACTIVE_SET_ITERS {
        // 0 inactive, 1 lower, 2 upper
        let state: Vec<u8> = (0..n)
            .map(|i| {
                if mu[i] - c[i] * (x[i] - problem.lower[i]) > 0.0 {
                    1
                } else if -mu[i] + c[i] * (x[i] - problem.upper[i]) > 0.0 {
                    2
                } else {
                    0
                }
            })
            .collect();
        if prev.as_ref() == Some(&state) {
            let (active_low, active_high) = split_sets(&state);
            for i in 0..n {
                x[i] = clamp(i, x[i]);
            }
            return Ok(PdasSolution {
                x,
                iterations: iter - 1,
                active_low,
                active_high,
            });
        }
        if !seen.insert(state.clone()) {
            return Err(Error::ActiveSetCycle { iterations: iter });
        }
        for i in 0..n {
            match state[i] {
                1 => x[i] = problem.lower[i],
                2 => x[i] = problem.upper[i],
                _ => {}
            }
        }
        let inactive: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        if !inactive.is_empty() {
            let mut rhs: Vec<f64> = inactive.iter().map(|&i| problem.b[i]).collect();
            for (k, &i) in inactive.iter().enumerate() {
                for (j, v) in problem.a.row(i) {
                    if state[j] != 0 {
                        rhs[k] -= v * x[j];
                    }
                }
            }
            let sub = problem.a.submatrix(&inactive);
            let guess: Vec<f64> = inactive.iter().map(|&i| x[i]).collect();
            let sol = pcg(&sub, &rhs, Some(&guess), INNER_TOL)
                .or_else(|_| pcg(&sub, &rhs, Some(&guess), 1e-12))?;
            for (k, &i) in inactive.iter().enumerate() {
                x[i] = sol.x[k];
            }
        }
        mu = problem.multiplier(&x);
        for i in 0..n {
            if state[i] == 0 {
                mu[i] = 0.0;
            }
        }
        prev = Some(state);
    }
    Err(Error::NotConverged {
        method: "pdas",
        iterations: MAX_ACTIVE_SET_ITERS,
        residual: problem.complementarity_residual(&x),
    })
}

fn split_sets(state: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let low = (0..state.len()).filter(|&i| state[i] == 1).collect();
    let high = (0..state.len()).filter(|&i| state[i] == 2).collect();
    (low, high)
}

/// Projected gradient iteration with step `1 / |A|_inf`, used as a slow but
/// simple reference solver.
pub fn projected_gradient(problem: &PdasProblem, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = problem.dim();
    let lip = (0..n)
        .map(|i| problem.a.row(i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / lip;
    let mut x: Vec<f64> = (0..n)
        .map(|i| 0.0f64.clamp(problem.lower[i], problem.upper[i]))
        .collect();
    for _ in 0..max_iter {
        let g = problem.multiplier(&x);
        let mut change: f64 = 0.0;
        for i in 0..n {
            let xn = (x[i] - step * g[i]).clamp(problem.lower[i], problem.upper[i]);
            change = change.max((xn - x[i]).abs());
            x[i] = xn;
        }
        if change < tol {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Positive diagonal plus a random graph Laplacian.
    pub(crate) fn random_problem(seed: u64, n: usize) -> PdasProblem {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = rng.random_range(0.5..2.0);
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

    #[test]
    fn single_node_clamps_to_lower_bound() {
        let p = PdasProblem::unit_box(CsrMatrix::identity(1), vec![-0.5]);
        let s = solve_pdas(&p, None).unwrap();
        assert_eq!(s.x, vec![0.0]);
        assert_eq!(s.active_low, vec![0]);
    }

    #[test]
    fn random_problems_match_projected_gradient() {
        for seed in 0..20 {
            let n = 10 + (seed as usize * 7) % 41;
            let p = random_problem(seed, n);
            let s = solve_pdas(&p, None).unwrap();
            let oracle = projected_gradient(&p, 1e-15, 200_000);
            for i in 0..n {
                assert!((s.x[i] - oracle[i]).abs() < 1e-8, "seed {seed}");
            }
            let bn = math::norm2(&p.b);
            assert!(p.complementarity_residual(&s.x) <= 1e-10 * bn);
            assert!(s.x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn malformed_problems_are_rejected() {
        let p = PdasProblem::unit_box(CsrMatrix::identity(2), vec![1.0]);
        assert!(solve_pdas(&p, None).is_err());
        let z = CsrMatrix::from_dense(&[vec![0.0, 0.0], vec![0.0, 1.0]]);
        assert!(solve_pdas(&PdasProblem::unit_box(z, vec![1.0, 1.0]), None).is_err());
    }

    proptest! {
        #[test]
        fn feasible_and_complementary(seed in 0u64..10_000, n in 1usize..30) {
            let p = random_problem(seed, n);
            let s = solve_pdas(&p, None).unwrap();
            prop_assert!(s.x.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(p.complementarity_residual(&s.x) <= 1e-10 * math::norm2(&p.b).max(1.0));
        }
    }
}
