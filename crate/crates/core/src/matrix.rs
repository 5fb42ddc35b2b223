//! Dense symmetric matrices.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A dense real symmetric matrix. Symmetry is enforced by construction:
/// every mutator writes both `(i, j)` and `(j, i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    n: usize,
    data: DMatrix<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: DMatrix::zeros(n, n) }
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle (i <= j).
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m.data[(i, j)] = v;
                m.data[(j, i)] = v;
            }
        }
        m
    }

    /// Wraps a dense matrix, symmetrizing as `(M + M^T) / 2`.
    pub fn from_dense_symmetrized(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "matrix must be square");
        let data = (&m + m.transpose()) * 0.5;
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[(i, j)] = v;
        self.data[(j, i)] = v;
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        (&self.data - &other.data).norm()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        self.data.dot(&other.data)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { n: self.n, data: &self.data + &other.data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { n: self.n, data: &self.data - &other.data }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { n: self.n, data: &self.data * s }
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }
}

/// Symmetric Gaussian noise matrix: the upper triangle (diagonal included)
/// is sampled i.i.d. `N(0, sigma^2)` and mirrored, so each diagonal entry is
/// sampled exactly once and `W == W^T` holds exactly.
pub fn symmetric_gaussian<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> SymmetricMatrix {
    SymmetricMatrix::from_fn(n, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        sigma * z
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn symmetry_is_exact_by_construction() {
        let mut rng = rng_from_seed(5);
        let w = symmetric_gaussian(40, 1.7, &mut rng);
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(w.get(i, j), w.get(j, i));
            }
        }
    }

    #[test]
    fn gaussian_entry_variance_matches_formula() {
        // Weak-recovery noise scale at (n, d, gamma, eps, delta); the spec
        // pins entrywise variance 24/(n*gamma*d) * ln(2/delta) / eps^2.
        let (n, d, gamma, eps, delta) = (300.0f64, 30.0, 0.8, 1.0, 0.01);
        let var = 24.0 / (n * gamma * d) * (2.0f64 / delta).ln() / (eps * eps);
        let mut rng = rng_from_seed(88);
        // 1500^2 entries ~ 1.1e6 on the upper triangle alone.
        let m = 1500;
        let w = symmetric_gaussian(m, var.sqrt(), &mut rng);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0usize;
        for i in 0..m {
            for j in i..m {
                let v = w.get(i, j);
                sum += v;
                sumsq += v * v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let est = sumsq / count as f64 - mean * mean;
        assert!(
            (est - var).abs() <= 0.05 * var,
            "empirical variance {est} vs formula {var}"
        );
    }
}
