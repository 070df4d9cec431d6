//! Small dense/sparse helpers shared by the network model and the QP oracle.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Above this dimension the eigen-extremes switch from a full symmetric
/// eigendecomposition to power / inverse-power iteration.
pub const DENSE_EIGEN_LIMIT: usize = 512;

const ITERATIVE_TOL: f64 = 1e-10;
const ITERATIVE_MAX_ITER: usize = 200_000;

/// Smallest and largest eigenvalue of a symmetric positive definite matrix.
pub fn eigen_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() <= DENSE_EIGEN_LIMIT {
        dense_eigen_extremes(a)
    } else {
        iterative_eigen_extremes(a)
    }
}

pub fn dense_eigen_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Power iteration for the largest eigenvalue and inverse power iteration
/// (through a Cholesky factor) for the smallest. Stops once the eigen-residual
/// `||A u - lambda u||` drops below 1e-10 relative to `lambda`.
pub fn iterative_eigen_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let n = a.nrows();
    let start = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());

    let max = rayleigh_iteration(&start, |u| a * u, |lambda| lambda, a);
    let chol = a
        .clone()
        .cholesky()
        .expect("eigen_extremes requires a positive definite matrix");
    let inv_max = rayleigh_iteration(&start, |u| chol.solve(u), |mu| 1.0 / mu, a);
    (inv_max, max)
}

fn rayleigh_iteration(
    start: &DVector<f64>,
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    to_eigen: impl Fn(f64) -> f64,
    a: &DMatrix<f64>,
) -> f64 {
    let mut u = start.normalize();
    for _ in 0..ITERATIVE_MAX_ITER {
        let w = apply(&u);
        let lambda = to_eigen(u.dot(&w));
        u = w.normalize();
        let residual = (a * &u - &u * lambda).norm();
        if residual <= ITERATIVE_TOL * lambda.abs().max(1.0) {
            break;
        }
    }
    // Rayleigh quotient of the converged vector.
    (a * &u).dot(&u)
}

/// Symmetric matrix kept as per-row `(column, value)` lists. Built from a
/// dense matrix by dropping exact zeros, so a tree Laplacian stays O(N).
#[derive(Debug, Clone)]
pub struct SparseSym {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSym {
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let rows = (0..a.nrows())
            .map(|i| {
                (0..a.ncols())
                    .filter_map(|j| {
                        let v = a[(i, j)];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        SparseSym { rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map_or(0.0, |(_, v)| *v)
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows
                .iter()
                .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum::<f64>()),
        )
    }

    /// `x^T A x`.
    pub fn quad(&self, x: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| x[i] * row.iter().map(|&(j, v)| v * x[j]).sum::<f64>())
            .sum()
    }
}
