//! Orthogonal projection onto `K = { X PSD, X_ii = 1/n }`, the strongly
//! convex optimization at the core of private weak recovery, plus spectral
//! utilities and an empirical sensitivity probe.
//!
//! Two interchangeable solvers compute the projection:
//!
//! * [`project_to_k`] — the default engine. It maximizes the Lagrangian
//!   dual over the diagonal multipliers with L-BFGS; each dual evaluation
//!   is one eigendecomposition and a few dozen suffice. The minimizer is
//!   `clip_psd(Y - Diag(y*))` for the optimal multipliers `y*`.
//! * [`project_to_k_dykstra`] — Dykstra's alternating projections between
//!   the PSD cone and the fixed-diagonal affine set. Converges to the same
//!   point but needs a few thousand sweeps at moderate `n`, so it serves as
//!   the small-`n` reference the fast engine is tested against.

use crate::matrix::SymmetricMatrix;
use crate::sbm::{center_rescale, Graph};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("eigenpair iteration did not converge: residual {residual}")]
    EigenNotConverged { residual: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, ProjectionError>;

/// Outcome of a projection. `converged == false` means the iteration budget
/// ran out; the report still carries the best iterate, never a silent value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub result: SymmetricMatrix,
    /// Work count: eigendecompositions for the dual engine, sweeps for Dykstra.
    pub iterations: usize,
    /// `||Y - result||_F^2` at exit.
    pub final_objective: f64,
    /// Always 0: the diagonal is overwritten exactly at exit.
    pub diag_violation: f64,
    /// `max(0, -lambda_min(result))`.
    pub psd_violation: f64,
    pub converged: bool,
}

/// Clips a symmetric matrix to the PSD cone by zeroing negative eigenvalues.
/// Returns the clipped matrix and the smallest eigenvalue of the input.
/// Reconstruction subtracts the smaller eigenvalue group, so a nearly-PSD
/// input costs little beyond its eigendecomposition.
pub(crate) fn clip_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let vals = &eig.eigenvalues;
    let mut lam_min = f64::INFINITY;
    let mut neg = 0usize;
    for i in 0..n {
        lam_min = lam_min.min(vals[i]);
        if vals[i] < 0.0 {
            neg += 1;
        }
    }
    let mut out;
    if neg <= n / 2 {
        out = m.clone();
        for i in 0..n {
            if vals[i] < 0.0 {
                let v = eig.eigenvectors.column(i);
                out.ger(-vals[i], &v, &v, 1.0);
            }
        }
    } else {
        out = DMatrix::zeros(n, n);
        for i in 0..n {
            if vals[i] > 0.0 {
                let v = eig.eigenvectors.column(i);
                out.ger(vals[i], &v, &v, 1.0);
            }
        }
    }
    // Kill the rounding skew from the rank updates.
    let sym = (&out + out.transpose()) * 0.5;
    (sym, lam_min)
}

fn overwrite_diag(mut m: DMatrix<f64>, c: f64) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        m[(i, i)] = c;
    }
    m
}

/// Dual objective for the projection: given multipliers `y`,
/// `psi(y) = || clip_psd(Y - Diag(y)) ||_F^2 + 2 c^T y`, whose gradient is
/// `2 (c - diag(X(y)))`. Minimizing `psi` solves the dual of the projection.
struct DualProblem<'a> {
    y_mat: &'a DMatrix<f64>,
    c: f64,
    evals: usize,
}

impl<'a> DualProblem<'a> {
    fn eval(&mut self, y: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        self.evals += 1;
        let n = self.y_mat.nrows();
        let mut m = self.y_mat.clone();
        for i in 0..n {
            m[(i, i)] -= y[i];
        }
        let (x, _) = clip_psd(&m);
        let mut val = 0.0;
        for v in x.iter() {
            val += v * v;
        }
        val += 2.0 * self.c * y.sum();
        let grad = DVector::from_fn(n, |i, _| 2.0 * (self.c - x[(i, i)]));
        (val, grad, x)
    }
}

/// Projects `y` onto `K = { X PSD, X_ii = 1/n }` with the dual L-BFGS engine.
///
/// Feasibility at exit: the diagonal is exact, and `lambda_min >= -tol`
/// because the PSD factor is exact up to the diagonal overwrite. Stops when
/// `max_i |X(y)_ii - 1/n| <= tol`; hitting `max_iters` first yields
/// `converged == false` with the best iterate.
pub fn project_to_k(y: &SymmetricMatrix, tol: f64, max_iters: usize) -> Result<ProjectionReport> {
    if !(tol > 0.0) {
        return Err(ProjectionError::InvalidParameter("tol must be > 0".into()));
    }
    let n = y.n();
    let c = 1.0 / n as f64;
    let mut prob = DualProblem { y_mat: y.as_dmatrix(), c, evals: 0 };

    let mut yk = DVector::<f64>::zeros(n);
    let (mut fk, mut gk, mut xk) = prob.eval(&yk);
    let mut best = (feas_violation(&xk, c), yk.clone(), xk.clone());

    let mem = 8usize;
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();

    let mut converged = feas_violation(&xk, c) <= tol;
    while !converged && prob.evals < max_iters {
        // Two-loop recursion for the L-BFGS direction.
        let mut q = gk.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, yv, rho) in pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q -= yv * a;
            alphas.push(a);
        }
        let gamma = pairs
            .back()
            .map(|(s, yv, _)| s.dot(yv) / yv.dot(yv).max(1e-300))
            .unwrap_or(0.5);
        q *= gamma.max(1e-12);
        for ((s, yv, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * yv.dot(&q);
            q += s * (a - b);
        }
        let mut dir = -q;
        let mut slope = gk.dot(&dir);
        if !(slope < 0.0) {
            dir = -gk.clone();
            slope = gk.dot(&dir);
        }

        // Backtracking Armijo line search.
        let mut step = 1.0f64;
        let mut accepted = false;
        for _ in 0..30 {
            if prob.evals >= max_iters {
                break;
            }
            let y_new = &yk + &dir * step;
            let (f_new, g_new, x_new) = prob.eval(&y_new);
            if f_new <= fk + 1e-4 * step * slope {
                let s = &y_new - &yk;
                let yv = &g_new - &gk;
                let sy = s.dot(&yv);
                if sy > 1e-14 {
                    pairs.push_back((s, yv, 1.0 / sy));
                    if pairs.len() > mem {
                        pairs.pop_front();
                    }
                }
                yk = y_new;
                fk = f_new;
                gk = g_new;
                xk = x_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let viol = feas_violation(&xk, c);
        if viol < best.0 {
            best = (viol, yk.clone(), xk.clone());
        }
        converged = viol <= tol;
    }

    let (viol, _, x_best) = if feas_violation(&xk, c) <= best.0 {
        (feas_violation(&xk, c), yk, xk)
    } else {
        best
    };
    converged = viol <= tol;

    let result_mat = overwrite_diag(x_best, c);
    let (_, lam_min) = (result_mat.clone(), smallest_eigenvalue(&result_mat));
    let result = SymmetricMatrix::from_dense_symmetrized(result_mat);
    let final_objective = {
        let d = y.as_dmatrix() - result.as_dmatrix();
        d.norm_squared()
    };
    Ok(ProjectionReport {
        result,
        iterations: prob.evals,
        final_objective,
        diag_violation: 0.0,
        psd_violation: (-lam_min).max(0.0),
        converged,
    })
}

fn feas_violation(x: &DMatrix<f64>, c: f64) -> f64 {
    let mut v = 0.0f64;
    for i in 0..x.nrows() {
        v = v.max((x[(i, i)] - c).abs());
    }
    v
}

fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let mut lam = f64::INFINITY;
    for i in 0..m.nrows() {
        lam = lam.min(eig.eigenvalues[i]);
    }
    lam
}

/// Dykstra's alternating projections between the PSD cone and the affine
/// set `{X_ii = 1/n}`; the classical reference solver for this projection.
///
/// Stops once successive iterates differ by at most `tol` in Frobenius norm
/// and the PSD violation is within `tol`. The objective sequence
/// `||Y - B_k||_F^2` is nondecreasing: Dykstra approaches the intersection
/// from the near side of `Y`, so the recorded trace climbs to the optimum.
pub fn project_to_k_dykstra(
    y: &SymmetricMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<(ProjectionReport, Vec<f64>)> {
    if !(tol > 0.0) {
        return Err(ProjectionError::InvalidParameter("tol must be > 0".into()));
    }
    let n = y.n();
    let c = 1.0 / n as f64;
    let ym = y.as_dmatrix().clone();
    let mut x = ym.clone();
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut prev: Option<DMatrix<f64>> = None;
    let mut trace = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;
    let mut psd_violation = f64::INFINITY;

    while iterations < max_iters {
        iterations += 1;
        let m = &x + &p;
        let (a, _) = clip_psd(&m);
        p = &m - &a;
        let m2 = &a + &q;
        let b = overwrite_diag(m2.clone(), c);
        q = &m2 - &b;
        trace.push((&ym - &b).norm_squared());
        if let Some(ref pr) = prev {
            if (&b - pr).norm() <= tol {
                let lam_min = smallest_eigenvalue(&b);
                psd_violation = (-lam_min).max(0.0);
                if psd_violation <= tol {
                    x = b;
                    converged = true;
                    break;
                }
            }
        }
        prev = Some(b.clone());
        x = b;
    }
    if !converged {
        psd_violation = (-smallest_eigenvalue(&x)).max(0.0);
    }
    let final_objective = (&ym - &x).norm_squared();
    let result = SymmetricMatrix::from_dense_symmetrized(x);
    Ok((
        ProjectionReport {
            result,
            iterations,
            final_objective,
            diag_violation: 0.0,
            psd_violation,
            converged,
        },
        trace,
    ))
}

/// Leading eigenpair of a symmetric matrix: the algebraically largest
/// eigenvalue and its unit eigenvector, sign-fixed so the first coordinate
/// with magnitude above 1e-12 is positive. When the top two eigenvalues
/// coincide to 1e-12 the smaller-index eigenvector is returned.
pub fn leading_eigenpair(m: &SymmetricMatrix, tol: f64) -> Result<(f64, DVector<f64>)> {
    let n = m.n();
    let eig = SymmetricEigen::new(m.as_dmatrix().clone());
    let mut idx = 0usize;
    let mut lam = f64::NEG_INFINITY;
    let mut spectral = 0.0f64;
    for i in 0..n {
        let v = eig.eigenvalues[i];
        spectral = spectral.max(v.abs());
        if v > lam + 1e-12 {
            lam = v;
            idx = i;
        }
    }
    let mut v = eig.eigenvectors.column(idx).into_owned();
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    if let Some(k) = v.iter().position(|&x| x.abs() > 1e-12) {
        if v[k] < 0.0 {
            v = -v;
        }
    }
    let residual = (m.as_dmatrix() * &v - &v * lam).norm();
    if residual > tol * spectral.max(1e-30) {
        return Err(ProjectionError::EigenNotConverged { residual });
    }
    Ok((lam, v))
}

/// One trial of the sensitivity probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeTrial {
    pub edge: (u32, u32),
    /// `||proj(Y(g)) - proj(Y(g'))||_F^2` for the toggled graph `g'`.
    pub sq_distance: f64,
    /// `||Y(g) - Y(g')||_F^2`, which is `2 (edge_val - non_edge_val)^2`.
    pub input_sq_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityProbe {
    pub max_sq_distance: f64,
    /// The stability bound `24 / (n gamma d)` the probe is compared against.
    pub bound: f64,
    pub trials: Vec<ProbeTrial>,
}

/// Empirically probes the L2 sensitivity of the projection: toggles random
/// single edges of `g`, projects both sides, and records the squared
/// Frobenius distances.
pub fn sensitivity_probe<R: Rng + ?Sized>(
    g: &Graph,
    d: f64,
    gamma: f64,
    trials: usize,
    tol: f64,
    max_iters: usize,
    rng: &mut R,
) -> Result<SensitivityProbe> {
    if trials == 0 {
        return Err(ProjectionError::InvalidParameter("need at least one trial".into()));
    }
    let n = g.n();
    let y = center_rescale(g, d, gamma);
    let base = project_to_k(&y, tol, max_iters)?;
    let edge_val = (1.0 - d / n as f64) / (gamma * d);
    let non_edge_val = -1.0 / (gamma * n as f64);
    let input_sq = 2.0 * (edge_val - non_edge_val) * (edge_val - non_edge_val);
    let mut out = Vec::with_capacity(trials);
    let mut max_sq: f64 = 0.0;
    for _ in 0..trials {
        let i = rng.gen_range(0..n as u32);
        let j = loop {
            let j = rng.gen_range(0..n as u32);
            if j != i {
                break j;
            }
        };
        let g2 = g.toggled(i, j).expect("valid random pair");
        let y2 = center_rescale(&g2, d, gamma);
        let proj2 = project_to_k(&y2, tol, max_iters)?;
        let dist = base.result.frobenius_distance(&proj2.result);
        let sq = dist * dist;
        max_sq = max_sq.max(sq);
        out.push(ProbeTrial {
            edge: (i.min(j), i.max(j)),
            sq_distance: sq,
            input_sq_distance: input_sq,
        });
    }
    Ok(SensitivityProbe {
        max_sq_distance: max_sq,
        bound: 24.0 / (n as f64 * gamma * d),
        trials: out,
    })
}

/// A random member of `K`: the Gram matrix of `n` random unit vectors in
/// `R^rank`, scaled by `1/n`. Useful as a feasible probe point.
pub fn random_member_of_k<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> SymmetricMatrix {
    let rank = rank.max(1);
    let mut u = DMatrix::<f64>::zeros(n, rank);
    for i in 0..n {
        loop {
            for j in 0..rank {
                u[(i, j)] = rng.sample(StandardNormal);
            }
            let norm = u.row(i).norm();
            if norm > 1e-12 {
                for j in 0..rank {
                    u[(i, j)] /= norm;
                }
                break;
            }
        }
    }
    let gram = &u * u.transpose() / n as f64;
    let mut m = SymmetricMatrix::from_dense_symmetrized(gram);
    for i in 0..n {
        m.set(i, i, 1.0 / n as f64);
    }
    m
}
