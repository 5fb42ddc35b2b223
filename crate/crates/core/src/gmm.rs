//! The private Gaussian-mixture center-recovery pipeline: a strongly convex
//! membership relaxation, soft thresholding, a truncated-Laplace norm gate,
//! local means, subsampling with Gaussian noise, a random projection, a
//! private histogram over the projected points, and noisy per-bin averages.
//!
//! Every scale the pipeline hard-codes lives in [`PipelineScaleProfile`].
//! The `paper` preset reproduces the published formulas verbatim; they only
//! bite at astronomical `n`, so the `desk` preset records tuned values that
//! make finite-size runs meaningful. Profiles with `lambda_sim > 0` feed a
//! data-dependent similarity into the membership objective; that breaks the
//! sensitivity argument behind the privacy proof, so such runs are flagged
//!`privacy_faithful: false` in every report.

use crate::dp::{
    self, compose, gaussian_noise_scale, histogram_learner, sample_truncated_laplace,
    HistogramConfig, PrivacyBudget, TruncatedLaplaceParams,
};
use crate::matrix::SymmetricMatrix;
use crate::projection::clip_psd;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Dp(#[from] dp::DpError),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, GmmError>;

// ---------------------------------------------------------------------------
// Dataset

/// `n` points in `R^d` with optional ground truth.
#[derive(Debug, Clone)]
pub struct MixtureDataset {
    points: DMatrix<f64>,
    pub truth: Option<Vec<usize>>,
    /// True component means (k x d), when known.
    pub means: Option<DMatrix<f64>>,
    pub delta_sep: f64,
}

impl MixtureDataset {
    pub fn new(points: DMatrix<f64>, delta_sep: f64) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(GmmError::InvalidParameter("dataset must be non-empty".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::InvalidParameter("points must be finite".into()));
        }
        Ok(Self { points, truth: None, means: None, delta_sep })
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }
}

/// Deterministic mean placement with min pairwise distance exactly
/// `delta_sep`: scaled orthonormal directions when `d >= k`, axis-stacked
/// levels otherwise.
pub fn place_means(k: usize, d: usize, delta_sep: f64) -> DMatrix<f64> {
    let mut means = DMatrix::<f64>::zeros(k, d);
    if k <= d {
        for l in 0..k {
            means[(l, l)] = delta_sep / 2.0f64.sqrt();
        }
    } else {
        for l in 0..k {
            let axis = l % d;
            let level = (l / d + 1) as f64;
            means[(l, axis)] = delta_sep * level;
        }
    }
    means
}

/// Samples a uniform mixture of unit-covariance Gaussians around
/// [`place_means`].
pub fn sample_mixture<R: Rng + ?Sized>(
    k: usize,
    d: usize,
    delta_sep: f64,
    n: usize,
    rng: &mut R,
) -> Result<MixtureDataset> {
    if k == 0 || d == 0 || n == 0 {
        return Err(GmmError::InvalidParameter("k, d, n must be positive".into()));
    }
    if !(delta_sep.is_finite() && delta_sep >= 0.0) {
        return Err(GmmError::InvalidParameter("delta_sep must be >= 0".into()));
    }
    let means = place_means(k, d, delta_sep);
    let mut pts = DMatrix::<f64>::zeros(n, d);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let label = rng.gen_range(0..k);
        truth.push(label);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            pts[(i, j)] = means[(label, j)] + z;
        }
    }
    let mut ds = MixtureDataset::new(pts, delta_sep)?;
    ds.truth = Some(truth);
    ds.means = Some(means);
    Ok(ds)
}

/// Dataset CSV: one point per row; an optional header row whose last column
/// may be named `label`, in which case that column carries integer truth.
/// Rows without a header are all coordinates.
pub fn parse_dataset_csv(text: &str, delta_sep: f64) -> Result<MixtureDataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut has_label = false;
    let mut width: Option<usize> = None;
    let mut first_data_line = true;
    for (idx, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if first_data_line {
            let numeric = fields.iter().all(|f| f.parse::<f64>().is_ok());
            if !numeric {
                has_label = fields.last().map(|f| f.eq_ignore_ascii_case("label")).unwrap_or(false);
                let coord_cols = fields.len() - usize::from(has_label);
                if coord_cols == 0 {
                    return Err(GmmError::Parse { line: idx + 1, msg: "no coordinate columns".into() });
                }
                width = Some(fields.len());
                first_data_line = false;
                continue;
            }
            first_data_line = false;
        }
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w {
            return Err(GmmError::Parse {
                line: idx + 1,
                msg: format!("expected {w} fields, got {}", fields.len()),
            });
        }
        let coord_count = w - usize::from(has_label);
        let mut row = Vec::with_capacity(coord_count);
        for f in &fields[..coord_count] {
            let v: f64 = f.parse().map_err(|_| GmmError::Parse {
                line: idx + 1,
                msg: format!("bad coordinate {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(GmmError::Parse { line: idx + 1, msg: "non-finite coordinate".into() });
            }
            row.push(v);
        }
        if has_label {
            let l: usize = fields[w - 1].parse().map_err(|_| GmmError::Parse {
                line: idx + 1,
                msg: format!("bad label {:?}", fields[w - 1]),
            })?;
            labels.push(l);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GmmError::Parse { line: 1, msg: "no data rows".into() });
    }
    let d = rows[0].len();
    let mut pts = DMatrix::<f64>::zeros(rows.len(), d);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            pts[(i, j)] = v;
        }
    }
    let mut ds = MixtureDataset::new(pts, delta_sep)?;
    if has_label {
        ds.truth = Some(labels);
    }
    Ok(ds)
}

pub fn write_dataset_csv(ds: &MixtureDataset) -> String {
    let mut s = String::new();
    let d = ds.dim();
    let with_labels = ds.truth.is_some();
    for j in 0..d {
        let _ = write!(s, "x{j}{}", if j + 1 < d { "," } else { "" });
    }
    if with_labels {
        let _ = write!(s, ",label");
    }
    s.push('\n');
    for i in 0..ds.n() {
        for j in 0..d {
            let _ = write!(s, "{}{}", ds.points()[(i, j)], if j + 1 < d { "," } else { "" });
        }
        if let Some(t) = &ds.truth {
            let _ = write!(s, ",{}", t[i]);
        }
        s.push('\n');
    }
    s
}

// ---------------------------------------------------------------------------
// Scale profile

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SubsampleRule {
    /// `|S| = max(1, ceil(n^c))`.
    Exponent(f64),
    /// `|S| = min(n, s)`.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum JlDimRule {
    /// `d* = ceil(c * ln n)`.
    LogFactor(f64),
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BinWidthRule {
    /// `b = k^p`.
    KPower(f64),
    /// `b = f * delta_sep`.
    SepFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScalarRule {
    KPower(f64),
    NPower(f64),
    Fixed(f64),
}

impl ScalarRule {
    fn eval(self, n: usize, k: usize) -> f64 {
        match self {
            ScalarRule::KPower(p) => (k as f64).powf(p),
            ScalarRule::NPower(p) => (n as f64).powf(p),
            ScalarRule::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HistEpsRule {
    /// `eps* = eps * 10 k^50 / n^0.01`.
    PaperFactor,
    /// `eps* = eps * f * k`.
    KFactor(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NuNoiseRule {
    /// Variance `n^(-x) * ln(2/delta) / eps^2` per coordinate.
    Exponent(f64),
    /// Exactly zero; test hook.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FinalNoiseRule {
    /// Variance `32 k^-120 ln(2 k n / delta) / eps^2` per coordinate.
    PaperFormula,
    /// Recompute the release sensitivity from the profile's own bin width,
    /// projection dimension, and subsample size via the two-case argument
    /// `Delta_2 = 2 sqrt(d*) b (2k/|S|)`, then apply the Gaussian mechanism
    /// at budget `(eps*/k, delta*/k)`.
    TwoCaseSensitivity,
    /// Exactly zero; test hook.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObjectiveCoeffRule {
    /// `c_J = 10^10 k^300`, capped at 1e6 for arithmetic: past the cap
    /// every entry of the projection target sits far beyond the feasible
    /// box, so the projected optimum no longer depends on the coefficient.
    PaperFormula,
    Fixed(f64),
}

/// Every constant the pipeline hard-codes, in one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineScaleProfile {
    pub name: String,
    pub subsample: SubsampleRule,
    pub gate_scale_exponent: f64,
    pub gate_reject_exponent: f64,
    pub gate_slack_exponent: f64,
    pub nu_noise: NuNoiseRule,
    pub jl_dim: JlDimRule,
    pub bin_width: BinWidthRule,
    pub hist_alpha: ScalarRule,
    pub hist_beta: ScalarRule,
    pub hist_eps: HistEpsRule,
    pub final_noise: FinalNoiseRule,
    pub objective_coeff: ObjectiveCoeffRule,
    /// Weight of the data-similarity term in the membership objective.
    /// Zero keeps the objective data-independent (privacy-faithful);
    /// positive values are utility demos only.
    pub lambda_sim: f64,
    /// Similarity bandwidth as a fraction of the separation:
    /// `sigma_s = f * delta_sep`.
    pub sim_bandwidth_sep_fraction: f64,
    pub membership_tol: f64,
    pub membership_max_sweeps: usize,
}

impl PipelineScaleProfile {
    /// Bit-faithful formulas from the published algorithm.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            subsample: SubsampleRule::Exponent(0.01),
            gate_scale_exponent: 1.6,
            gate_reject_exponent: 1.7,
            gate_slack_exponent: 0.1,
            nu_noise: NuNoiseRule::Exponent(0.18),
            jl_dim: JlDimRule::LogFactor(100.0),
            bin_width: BinWidthRule::KPower(-15.0),
            hist_alpha: ScalarRule::KPower(-10.0),
            hist_beta: ScalarRule::NPower(-10.0),
            hist_eps: HistEpsRule::PaperFactor,
            final_noise: FinalNoiseRule::PaperFormula,
            objective_coeff: ObjectiveCoeffRule::PaperFormula,
            lambda_sim: 0.0,
            sim_bandwidth_sep_fraction: 0.5,
            membership_tol: 1e-5,
            membership_max_sweeps: 150,
        }
    }

    /// Recorded tuned values for finite-size runs. The similarity term is
    /// active, so desk runs are utility demos, not privacy-faithful ones.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            subsample: SubsampleRule::Fixed(64),
            gate_scale_exponent: 0.6,
            gate_reject_exponent: 1.4,
            gate_slack_exponent: 0.1,
            nu_noise: NuNoiseRule::Exponent(1.7),
            jl_dim: JlDimRule::Fixed(8),
            bin_width: BinWidthRule::SepFraction(0.5),
            hist_alpha: ScalarRule::Fixed(0.25),
            hist_beta: ScalarRule::Fixed(0.05),
            hist_eps: HistEpsRule::KFactor(180.0),
            final_noise: FinalNoiseRule::TwoCaseSensitivity,
            objective_coeff: ObjectiveCoeffRule::Fixed(4.0),
            lambda_sim: 2.5,
            sim_bandwidth_sep_fraction: 0.5,
            membership_tol: 1e-5,
            membership_max_sweeps: 150,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn privacy_faithful(&self) -> bool {
        self.lambda_sim == 0.0
    }

    pub fn subsample_size(&self, n: usize) -> usize {
        match self.subsample {
            SubsampleRule::Exponent(c) => ((n as f64).powf(c).ceil() as usize).clamp(1, n),
            SubsampleRule::Fixed(s) => s.clamp(1, n),
        }
    }

    pub fn nu_noise_variance(&self, n: usize, budget: PrivacyBudget) -> f64 {
        match self.nu_noise {
            NuNoiseRule::Zero => 0.0,
            NuNoiseRule::Exponent(x) => {
                (n as f64).powf(-x) * (2.0 / budget.delta).ln() / (budget.epsilon * budget.epsilon)
            }
        }
    }

    pub fn jl_dim(&self, n: usize) -> usize {
        match self.jl_dim {
            JlDimRule::LogFactor(c) => (c * (n as f64).ln()).ceil().max(1.0) as usize,
            JlDimRule::Fixed(d) => d.max(1),
        }
    }

    pub fn bin_width(&self, k: usize, delta_sep: f64) -> f64 {
        match self.bin_width {
            BinWidthRule::KPower(p) => (k as f64).powf(p),
            BinWidthRule::SepFraction(f) => f * delta_sep,
        }
    }

    pub fn hist_alpha(&self, n: usize, k: usize) -> f64 {
        self.hist_alpha.eval(n, k).clamp(1e-12, 1.0 - 1e-9)
    }

    pub fn hist_beta(&self, n: usize, k: usize) -> f64 {
        self.hist_beta.eval(n, k).clamp(1e-12, 1.0 - 1e-9)
    }

    pub fn hist_epsilon(&self, n: usize, k: usize, epsilon: f64) -> f64 {
        match self.hist_eps {
            HistEpsRule::PaperFactor => {
                epsilon * 10.0 * (k as f64).powf(50.0) / (n as f64).powf(0.01)
            }
            HistEpsRule::KFactor(f) => epsilon * f * k as f64,
        }
    }

    /// `delta* = delta / n`, as the histogram step prescribes.
    pub fn hist_delta(&self, n: usize, delta: f64) -> f64 {
        delta / n as f64
    }

    pub fn objective_coeff(&self, k: usize) -> f64 {
        match self.objective_coeff {
            ObjectiveCoeffRule::Fixed(v) => v,
            ObjectiveCoeffRule::PaperFormula => (1e10 * (k as f64).powf(300.0)).min(1e6),
        }
    }

    pub fn final_noise_sigma(
        &self,
        n: usize,
        k: usize,
        delta_sep: f64,
        budget: PrivacyBudget,
    ) -> Result<f64> {
        match self.final_noise {
            FinalNoiseRule::Zero => Ok(0.0),
            FinalNoiseRule::PaperFormula => {
                let var = 32.0 * (k as f64).powf(-120.0)
                    * (2.0 * k as f64 * n as f64 / budget.delta).ln()
                    / (budget.epsilon * budget.epsilon);
                Ok(var.sqrt())
            }
            FinalNoiseRule::TwoCaseSensitivity => {
                let s = self.subsample_size(n) as f64;
                let dstar = self.jl_dim(n) as f64;
                let b = self.bin_width(k, delta_sep);
                let sens = 2.0 * dstar.sqrt() * b * (2.0 * k as f64 / s);
                let kk = k as f64;
                let release_budget = PrivacyBudget {
                    epsilon: self.hist_epsilon(n, k, budget.epsilon) / kk,
                    delta: (self.hist_delta(n, budget.delta) / kk).min(1.0),
                };
                Ok(gaussian_noise_scale(sens, release_budget)?)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Membership matrix

/// Symmetric matrix with entries in [0, 1] estimating co-membership.
#[derive(Debug, Clone)]
pub struct MembershipMatrix {
    w: SymmetricMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `max(0, -lambda_min)`.
    pub psd_violation: f64,
    /// Distance of the worst entry from [0, 1].
    pub box_violation: f64,
    /// Worst row-sum excess over `n/k`.
    pub row_sum_violation: f64,
    /// Worst diagonal excess over 1.
    pub diag_violation: f64,
}

impl MembershipMatrix {
    pub fn matrix(&self) -> &SymmetricMatrix {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.w.n()
    }

    pub fn feasibility(&self, k: usize) -> FeasibilityReport {
        let n = self.w.n();
        let m = self.w.as_dmatrix();
        let mut box_v = 0.0f64;
        let mut diag_v = 0.0f64;
        let mut row_v = 0.0f64;
        let cap = n as f64 / k as f64;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let v = m[(i, j)];
                box_v = box_v.max((-v).max(v - 1.0).max(0.0));
                row += v;
            }
            row_v = row_v.max((row - cap).max(0.0));
            diag_v = diag_v.max((m[(i, i)] - 1.0).max(0.0));
        }
        let eig = nalgebra::SymmetricEigen::new(m.clone());
        let lam_min = (0..n).map(|i| eig.eigenvalues[i]).fold(f64::INFINITY, f64::min);
        FeasibilityReport {
            psd_violation: (-lam_min).max(0.0),
            box_violation: box_v,
            row_sum_violation: row_v,
            diag_violation: diag_v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MembershipOutput {
    pub matrix: MembershipMatrix,
    pub converged: bool,
    pub sweeps: usize,
    /// Objective `||W||_F^2 - <C, W>` at the feasible outer iterates.
    pub objective_trace: Vec<f64>,
    pub feasibility: FeasibilityReport,
}

/// Dykstra projection onto
/// `{W PSD} ∩ {0 <= W_ij <= 1} ∩ {sum_j W_ij <= n/k for all i}`.
/// The row-sum halfspace increments are scalar multiples of their normals,
/// so the state stays O(n^2).
fn dykstra_membership(
    target: &DMatrix<f64>,
    k: usize,
    tol: f64,
    max_sweeps: usize,
) -> (DMatrix<f64>, usize, bool) {
    let n = target.nrows();
    let cap = n as f64 / k as f64;
    let halfspace_norm_sq = (n as f64 + 1.0) / 2.0;
    let mut w = target.clone();
    let mut p_psd = DMatrix::<f64>::zeros(n, n);
    let mut p_box = DMatrix::<f64>::zeros(n, n);
    let mut row_mult = vec![0.0f64; n];
    let mut prev: Option<DMatrix<f64>> = None;
    let mut sweeps = 0usize;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let m = &w + &p_psd;
        let (a, _) = clip_psd(&m);
        p_psd = &m - &a;
        w = a;
        let m2 = &w + &p_box;
        let mut b = m2.clone();
        for v in b.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        p_box = &m2 - &b;
        w = b;
        for i in 0..n {
            let ci = row_mult[i];
            if ci != 0.0 {
                for j in 0..n {
                    w[(i, j)] += ci * 0.5;
                    w[(j, i)] += ci * 0.5;
                }
            }
            let row_sum: f64 = (0..n).map(|j| w[(i, j)]).sum();
            let viol = row_sum - cap;
            if viol > 0.0 {
                let t = viol / halfspace_norm_sq;
                for j in 0..n {
                    w[(i, j)] -= t * 0.5;
                    w[(j, i)] -= t * 0.5;
                }
                row_mult[i] = t;
            } else {
                row_mult[i] = 0.0;
            }
        }
        if let Some(ref pr) = prev {
            if (&w - pr).norm() <= tol {
                converged = true;
                break;
            }
        }
        prev = Some(w.clone());
    }
    (w, sweeps, converged)
}

/// Solves the membership relaxation
/// `min ||W||_F^2 - c_J <J, W> - lambda_sim <S, W>` over the feasible set by
/// projected gradient with a Dykstra feasibility projection. The objective
/// is quadratic with Hessian `2 I`, so the unit step `1/L` maps every
/// iterate to the fixed target `C/2` and one exact projection reaches the
/// minimizer; the outer loop re-projects only to confirm the fixed point.
pub fn compute_membership(
    ds: &MixtureDataset,
    k: usize,
    profile: &PipelineScaleProfile,
    outer_iters: usize,
) -> Result<MembershipOutput> {
    let n = ds.n();
    if k == 0 || n < k {
        return Err(GmmError::InvalidParameter(format!("need n >= k >= 1, got n = {n}, k = {k}")));
    }
    let c_j = profile.objective_coeff(k);
    let lambda = profile.lambda_sim;
    let mut c = DMatrix::<f64>::from_element(n, n, c_j);
    if lambda != 0.0 {
        let sigma_s = profile.sim_bandwidth_sep_fraction * ds.delta_sep;
        let denom = 2.0 * sigma_s * sigma_s;
        if !(denom > 0.0) {
            return Err(GmmError::InvalidParameter(
                "similarity term needs a positive bandwidth".into(),
            ));
        }
        let pts = ds.points();
        for i in 0..n {
            for j in i..n {
                let d2 = (pts.row(i) - pts.row(j)).norm_squared();
                let s = (-d2 / denom).exp();
                c[(i, j)] += lambda * s;
                c[(j, i)] = c[(i, j)];
            }
        }
    }
    let objective = |w: &DMatrix<f64>| -> f64 { w.norm_squared() - w.dot(&c) };

    // Feasible start: (1/k) J has row sums exactly n/k and is PSD.
    let mut w = DMatrix::<f64>::from_element(n, n, 1.0 / k as f64);
    let mut trace = vec![objective(&w)];
    let mut sweeps_total = 0usize;
    let mut converged = true;
    for _ in 0..outer_iters.max(1) {
        // Gradient step with step 1/L: W - (1/2)(2W - C) = C/2.
        let target = &c * 0.5;
        let (w_next, sweeps, conv) =
            dykstra_membership(&target, k, profile.membership_tol, profile.membership_max_sweeps);
        sweeps_total += sweeps;
        converged = conv;
        let moved = (&w_next - &w).norm();
        w = w_next;
        trace.push(objective(&w));
        if moved <= profile.membership_tol * 10.0 {
            break;
        }
    }
    let matrix = MembershipMatrix { w: SymmetricMatrix::from_dense_symmetrized(w) };
    let feasibility = matrix.feasibility(k);
    Ok(MembershipOutput {
        feasibility,
        matrix,
        converged,
        sweeps: sweeps_total,
        objective_trace: trace,
    })
}

// ---------------------------------------------------------------------------
// Pipeline stages

/// Soft threshold: 0 below 0.8, 1 above 0.9, linear in between. The input
/// is clamped to [0, 1] first; the map is 10-Lipschitz.
pub fn soft_threshold(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    ((x - 0.8) / 0.1).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateReport {
    pub accept: bool,
    pub tau: f64,
    /// True when `|tau| >= n^gate_reject_exponent` forced the rejection.
    pub tau_out_of_range: bool,
    pub phi_l1: f64,
    pub threshold: f64,
}

/// The truncated-Laplace norm gate: reject unless the soft-thresholded
/// membership mass clears the noisy threshold.
pub fn norm_gate<R: Rng + ?Sized>(
    w: &MembershipMatrix,
    k: usize,
    budget: PrivacyBudget,
    profile: &PipelineScaleProfile,
    rng: &mut R,
) -> Result<GateReport> {
    budget.validate()?;
    let n = w.n() as f64;
    let scale = n.powf(profile.gate_scale_exponent);
    let params = TruncatedLaplaceParams::new(
        -scale * (1.0 + (1.0 / budget.delta).ln() / budget.epsilon),
        scale / budget.epsilon,
    )?;
    let tau = sample_truncated_laplace(params, rng);
    let phi_l1: f64 = w.matrix().as_dmatrix().iter().map(|&v| soft_threshold(v)).sum();
    let slack = 1.0 / n.powf(profile.gate_slack_exponent) + 1.0 / (k as f64).powf(100.0);
    let threshold = n * n / k as f64 * (1.0 - slack) + tau;
    let tau_out_of_range = tau.abs() >= n.powf(profile.gate_reject_exponent);
    let accept = !tau_out_of_range && phi_l1 > threshold;
    Ok(GateReport { accept, tau, tau_out_of_range, phi_l1, threshold })
}

/// Per-point local means under the soft-thresholded membership weights;
/// rows with zero thresholded mass map to the zero vector.
pub fn local_means(w: &MembershipMatrix, ds: &MixtureDataset) -> Result<Vec<DVector<f64>>> {
    let n = w.n();
    if ds.n() != n {
        return Err(GmmError::InvalidParameter(format!(
            "membership is {n} x {n} but dataset has {} points",
            ds.n()
        )));
    }
    let d = ds.dim();
    let m = w.matrix().as_dmatrix();
    let pts = ds.points();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut mass = 0.0;
        let mut acc = DVector::<f64>::zeros(d);
        for j in 0..n {
            let phi = soft_threshold(m[(i, j)]);
            if phi > 0.0 {
                mass += phi;
                for t in 0..d {
                    acc[t] += phi * pts[(j, t)];
                }
            }
        }
        if mass > 0.0 {
            acc /= mass;
        }
        out.push(acc);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SubsampleOutput {
    pub indices: Vec<usize>,
    pub noisy: Vec<DVector<f64>>,
    pub sigma: f64,
}

/// Uniformly subsamples local means without replacement and adds i.i.d.
/// Gaussian noise per coordinate.
pub fn privatize_subsample<R: Rng + ?Sized>(
    nus: &[DVector<f64>],
    budget: PrivacyBudget,
    profile: &PipelineScaleProfile,
    rng: &mut R,
) -> Result<SubsampleOutput> {
    budget.validate()?;
    let n = nus.len();
    if n == 0 {
        return Err(GmmError::InvalidParameter("no vectors to subsample".into()));
    }
    let s = profile.subsample_size(n);
    let mut indices: Vec<usize> = index_sample(rng, n, s).into_iter().collect();
    indices.sort_unstable();
    let sigma = profile.nu_noise_variance(n, budget).sqrt();
    let noisy = indices
        .iter()
        .map(|&i| {
            let mut v = nus[i].clone();
            if sigma > 0.0 {
                for t in 0..v.len() {
                    let z: f64 = rng.sample(StandardNormal);
                    v[t] += sigma * z;
                }
            }
            v
        })
        .collect();
    Ok(SubsampleOutput { indices, noisy, sigma })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RejectReason {
    /// The norm gate rejected.
    Gate,
    /// Fewer than `k` bins survived the histogram learner.
    TooFewBins,
    /// A selected bin held fewer than `|S|/(2k)` points.
    SmallBin,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::Gate => "gate",
            RejectReason::TooFewBins => "too-few-bins",
            RejectReason::SmallBin => "small-bin",
        }
    }
}

#[derive(Debug, Clone)]
pub enum ReleaseOutcome {
    Accept { centers: Vec<DVector<f64>> },
    Reject { reason: RejectReason },
}

/// Projects the noisy local means with a Gaussian JL matrix, learns a
/// private histogram over the projections, picks the `k` highest-count
/// bins (ties broken by a seeded shuffle, then bin-index order), rejects
/// when any chosen bin is underpopulated, and releases noisy per-bin
/// averages of the original vectors.
pub fn cluster_and_release<R: Rng + ?Sized>(
    nubars: &[DVector<f64>],
    k: usize,
    delta_sep: f64,
    total_n: usize,
    budget: PrivacyBudget,
    profile: &PipelineScaleProfile,
    rng: &mut R,
) -> Result<ReleaseOutcome> {
    let s = nubars.len();
    if s < k || k == 0 {
        return Err(GmmError::InvalidParameter(format!("need at least k = {k} vectors, got {s}")));
    }
    let d = nubars[0].len();
    let dstar = profile.jl_dim(total_n);
    let b = profile.bin_width(k, delta_sep);
    if !(b.is_finite() && b > 0.0) {
        return Err(GmmError::InvalidParameter(format!("bin width must be > 0, got {b}")));
    }
    // JL projection matrix, entries N(0, 1/d*).
    let scale = (1.0 / dstar as f64).sqrt();
    let phi = DMatrix::<f64>::from_fn(dstar, d, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        scale * z
    });
    let projected: Vec<Vec<f64>> =
        nubars.iter().map(|v| (&phi * v).iter().cloned().collect()).collect();

    let hist_budget = PrivacyBudget {
        epsilon: profile.hist_epsilon(total_n, k, budget.epsilon),
        delta: profile.hist_delta(total_n, budget.delta).min(1.0),
    };
    let cfg = HistogramConfig {
        offset: rng.gen::<f64>() * b,
        bin_width: b,
        alpha: profile.hist_alpha(total_n, k),
        beta: profile.hist_beta(total_n, k),
        budget: hist_budget,
        n: s,
    };
    let hist = histogram_learner(&projected, &cfg, rng)?;
    if hist.len() < k {
        return Ok(ReleaseOutcome::Reject { reason: RejectReason::TooFewBins });
    }

    // Rank bins by noisy frequency; break exact ties by a seeded shuffle
    // and then deterministic bin-index order.
    let mut ranked: Vec<(&Vec<i64>, f64, u64)> =
        hist.iter().map(|(key, &f)| (key, f, rng.gen::<u64>())).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then(a.2.cmp(&b.2))
            .then(a.0.cmp(b.0))
    });
    let chosen: Vec<Vec<i64>> = ranked.iter().take(k).map(|(key, _, _)| (*key).clone()).collect();

    let min_count = s as f64 / (2.0 * k as f64);
    let sigma = profile.final_noise_sigma(total_n, k, delta_sep, budget)?;
    let mut centers = Vec::with_capacity(k);
    for key in &chosen {
        let members: Vec<usize> = (0..s)
            .filter(|&j| {
                projected[j]
                    .iter()
                    .enumerate()
                    .all(|(t, &x)| dp::bin_index(x, cfg.offset, b) == key[t])
            })
            .collect();
        if (members.len() as f64) < min_count {
            return Ok(ReleaseOutcome::Reject { reason: RejectReason::SmallBin });
        }
        let mut avg = DVector::<f64>::zeros(d);
        for &j in &members {
            avg += &nubars[j];
        }
        avg /= members.len() as f64;
        if sigma > 0.0 {
            for t in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                avg[t] += sigma * z;
            }
        }
        centers.push(avg);
    }
    Ok(ReleaseOutcome::Accept { centers })
}

// ---------------------------------------------------------------------------
// Budget report and the end-to-end pipeline

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetStage {
    pub name: String,
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetReport {
    pub stages: Vec<BudgetStage>,
    pub composed: PrivacyBudget,
    /// The published bookkeeping total `(5 eps, 5 delta)`; present only
    /// under the paper profile whose accounting it belongs to.
    pub paper_total: Option<PrivacyBudget>,
    /// False when a data-dependent similarity term was active.
    pub privacy_faithful: bool,
}

/// Stage budgets mirroring the composition bookkeeping: the gate at
/// `(eps, delta)`, the subsample Gaussian at `(eps, delta)`, the histogram
/// at `(eps*, delta*)`, and `k` center releases at `(eps*/k, delta*/k)`.
pub fn budget_report(
    n: usize,
    k: usize,
    budget: PrivacyBudget,
    profile: &PipelineScaleProfile,
) -> BudgetReport {
    let eps_star = profile.hist_epsilon(n, k, budget.epsilon);
    let delta_star = profile.hist_delta(n, budget.delta).min(1.0);
    let mut stages = vec![
        BudgetStage { name: "norm-gate".into(), epsilon: budget.epsilon, delta: budget.delta },
        BudgetStage {
            name: "subsample-gaussian".into(),
            epsilon: budget.epsilon,
            delta: budget.delta,
        },
        BudgetStage { name: "histogram".into(), epsilon: eps_star, delta: delta_star },
    ];
    for i in 0..k {
        stages.push(BudgetStage {
            name: format!("center-release-{i}"),
            epsilon: eps_star / k as f64,
            delta: delta_star / k as f64,
        });
    }
    let composed = compose(
        &stages
            .iter()
            .map(|s| PrivacyBudget { epsilon: s.epsilon, delta: s.delta })
            .collect::<Vec<_>>(),
    );
    let paper_total = if profile.name == "paper" {
        Some(PrivacyBudget { epsilon: 5.0 * budget.epsilon, delta: (5.0 * budget.delta).min(1.0) })
    } else {
        None
    };
    BudgetReport { stages, composed, paper_total, privacy_faithful: profile.privacy_faithful() }
}

/// Key evaluated scales, recorded with every result for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub name: String,
    pub lambda_sim: f64,
    pub privacy_faithful: bool,
    pub subsample_size: usize,
    pub jl_dim: usize,
    pub bin_width: f64,
    pub hist_epsilon: f64,
    pub hist_delta: f64,
    pub nu_sigma: f64,
    pub final_sigma: f64,
    pub objective_coeff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineResult {
    /// "accept" or "reject".
    pub status: String,
    pub reject_reason: Option<String>,
    /// Estimated centers; empty on the reject path.
    pub centers: Vec<Vec<f64>>,
    pub budget_report: BudgetReport,
    pub profile: ProfileSummary,
    pub membership_converged: bool,
    pub membership_sweeps: usize,
    pub gate: Option<GateReport>,
}

impl PipelineResult {
    pub fn accepted(&self) -> bool {
        self.status == "accept"
    }
}

/// Runs the full private center-recovery pipeline on a dataset.
pub fn run_pipeline<R: Rng + ?Sized>(
    ds: &MixtureDataset,
    k: usize,
    budget: PrivacyBudget,
    profile: &PipelineScaleProfile,
    rng: &mut R,
) -> Result<PipelineResult> {
    budget.validate()?;
    let n = ds.n();
    let report = budget_report(n, k, budget, profile);
    let summary = ProfileSummary {
        name: profile.name.clone(),
        lambda_sim: profile.lambda_sim,
        privacy_faithful: profile.privacy_faithful(),
        subsample_size: profile.subsample_size(n),
        jl_dim: profile.jl_dim(n),
        bin_width: profile.bin_width(k, ds.delta_sep),
        hist_epsilon: profile.hist_epsilon(n, k, budget.epsilon),
        hist_delta: profile.hist_delta(n, budget.delta),
        nu_sigma: profile.nu_noise_variance(n, budget).sqrt(),
        final_sigma: profile.final_noise_sigma(n, k, ds.delta_sep, budget)?,
        objective_coeff: profile.objective_coeff(k),
    };
    let membership = compute_membership(ds, k, profile, 1)?;
    let reject = |reason: RejectReason, gate: Option<GateReport>, m: &MembershipOutput| {
        PipelineResult {
            status: "reject".into(),
            reject_reason: Some(reason.as_str().into()),
            centers: Vec::new(),
            budget_report: report.clone(),
            profile: summary.clone(),
            membership_converged: m.converged,
            membership_sweeps: m.sweeps,
            gate: gate.clone(),
        }
    };
    let gate = norm_gate(&membership.matrix, k, budget, profile, rng)?;
    if !gate.accept {
        return Ok(reject(RejectReason::Gate, Some(gate), &membership));
    }
    let nus = local_means(&membership.matrix, ds)?;
    let sub = privatize_subsample(&nus, budget, profile, rng)?;
    match cluster_and_release(&sub.noisy, k, ds.delta_sep, n, budget, profile, rng)? {
        ReleaseOutcome::Reject { reason } => Ok(reject(reason, Some(gate), &membership)),
        ReleaseOutcome::Accept { centers } => Ok(PipelineResult {
            status: "accept".into(),
            reject_reason: None,
            centers: centers.iter().map(|c| c.iter().cloned().collect()).collect(),
            budget_report: report,
            profile: summary,
            membership_converged: membership.converged,
            membership_sweeps: membership.sweeps,
            gate: Some(gate),
        }),
    }
}

/// Smallest over label permutations of the worst center error
/// `max_l || est_l - mu_pi(l) ||`. Exhaustive for `k <= 8`, greedy beyond.
pub fn matched_center_error(estimated: &[Vec<f64>], means: &DMatrix<f64>) -> f64 {
    let k = means.nrows();
    if estimated.len() != k || k == 0 {
        return f64::INFINITY;
    }
    let dist = |est: &[f64], l: usize| -> f64 {
        est.iter()
            .enumerate()
            .map(|(j, &v)| {
                let d = v - means[(l, j)];
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };
    if k <= 8 {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p: &[usize]| {
            let worst = (0..k).map(|l| dist(&estimated[l], p[l])).fold(0.0f64, f64::max);
            best = best.min(worst);
        });
        best
    } else {
        let mut used = vec![false; k];
        let mut worst = 0.0f64;
        for est in estimated {
            let (mut bl, mut bd) = (usize::MAX, f64::INFINITY);
            for l in 0..k {
                if !used[l] {
                    let d = dist(est, l);
                    if d < bd {
                        bd = d;
                        bl = l;
                    }
                }
            }
            used[bl] = true;
            worst = worst.max(bd);
        }
        worst
    }
}

fn permute(perm: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == perm.len() {
        f(perm);
        return;
    }
    for j in i..perm.len() {
        perm.swap(i, j);
        permute(perm, i + 1, f);
        perm.swap(i, j);
    }
}

/// Serializes a histogram map the way the external interface expects.
pub fn histogram_json(hist: &BTreeMap<Vec<i64>, f64>) -> serde_json::Value {
    serde_json::to_value(dp::histogram_to_bins(hist)).expect("histogram bins serialize")
}
