//! Independent reference implementations used only by tests: a cyclic
//! Jacobi eigensolver, a projected-gradient upper-bound solver for the
//! projection onto `K`, a rejection sampler for the truncated Laplace
//! distribution, and a two-sample KS statistic. None of these share code
//! with the implementation paths they check.

use crate::dp::TruncatedLaplaceParams;
use crate::matrix::SymmetricMatrix;
use nalgebra::DMatrix;
use rand::Rng;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// `(eigenvalues, eigenvectors)` with eigenvectors in columns, unsorted.
pub fn jacobi_eigen(m: &SymmetricMatrix) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.n();
    let mut a = m.as_dmatrix().clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = c * aip - s * aiq;
                    a[(i, q)] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = c * apj - s * aqj;
                    a[(q, j)] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// Gradient steps on `||Y - X||_F^2` with feasibility restoration by plain
/// alternating projections run to high precision. Tracks the best feasible
/// objective seen; the result upper-bounds the true projection objective.
pub fn projected_gradient_upper_bound(
    y: &SymmetricMatrix,
    outer_iters: usize,
) -> (SymmetricMatrix, f64) {
    let n = y.n();
    let c = 1.0 / n as f64;
    let ym = y.as_dmatrix().clone();
    let repair = |mut x: DMatrix<f64>| -> DMatrix<f64> {
        for _ in 0..4000 {
            for i in 0..n {
                x[(i, i)] = c;
            }
            let eig = nalgebra::SymmetricEigen::new(x.clone());
            let mut lam_min = f64::INFINITY;
            let mut rebuilt = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                lam_min = lam_min.min(eig.eigenvalues[i]);
                let l = eig.eigenvalues[i].max(0.0);
                if l > 0.0 {
                    let col = eig.eigenvectors.column(i);
                    rebuilt.ger(l, &col, &col, 1.0);
                }
            }
            x = (&rebuilt + rebuilt.transpose()) * 0.5;
            let diag_err = (0..n).map(|i| (x[(i, i)] - c).abs()).fold(0.0f64, f64::max);
            if lam_min >= -1e-12 && diag_err <= 1e-12 {
                break;
            }
        }
        for i in 0..n {
            x[(i, i)] = c;
        }
        x
    };
    let mut x = repair(ym.clone());
    let mut best = (&ym - &x).norm_squared();
    let mut best_x = x.clone();
    for t in 0..outer_iters {
        let eta = 0.25 / (1.0 + t as f64 / 8.0);
        let grad = (&x - &ym) * 2.0;
        x = repair(&x - grad * eta);
        let obj = (&ym - &x).norm_squared();
        if obj < best {
            best = obj;
            best_x = x.clone();
        }
    }
    (SymmetricMatrix::from_dense_symmetrized(best_x), best)
}

/// Rejection sampler for the truncated Laplace law: draw Lap(mu, b) and
/// reject positives. Oracle counterpart of the inverse-CDF sampler.
pub fn sample_truncated_laplace_rejection<R: Rng + ?Sized>(
    params: TruncatedLaplaceParams,
    rng: &mut R,
) -> f64 {
    loop {
        let u = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let centered = u - 0.5;
        let x = params.mu - params.b * centered.signum() * (1.0 - 2.0 * centered.abs()).ln();
        if x <= 0.0 {
            return x;
        }
    }
}

/// Two-sample Kolmogorov-Smirnov statistic; sorts both samples internally.
pub fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
