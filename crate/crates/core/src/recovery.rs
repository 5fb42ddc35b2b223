//! Private recovery algorithms for the stochastic block model: weak
//! recovery by projection + Gaussian noise + spectral rounding, majority
//! voting, exact recovery by graph splitting and boosting, and the
//! exponential-mechanism sampler (exact at small `n`).

use crate::dp::{self, compose, LaplaceParams, PrivacyBudget};
use crate::matrix::symmetric_gaussian;
use crate::projection::{leading_eigenpair, project_to_k, ProjectionError, ProjectionReport};
use crate::sbm::{alpha_beta_to_d_gamma, center_rescale, sample_sbm, split_graph, Graph, LabelVector, SbmError};
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("projection did not converge within the iteration budget")]
    ProjectionNotConverged,
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Dp(#[from] dp::DpError),
    #[error(transparent)]
    Sbm(#[from] SbmError),
    #[error("exact enumeration is limited to n <= {max}, got n = {n}")]
    TooLargeForExact { n: usize, max: usize },
}

pub type Result<T> = std::result::Result<T, RecoveryError>;

/// Whether a run adds the privacy noise or is the clearly-flagged
/// non-private baseline (noise exactly zero, not merely tiny).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseMode {
    Private(PrivacyBudget),
    NonPrivate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakRecoveryConfig {
    /// Public average-degree scale used to build `Y(G)`.
    pub d: f64,
    /// Public bias parameter.
    pub gamma: f64,
    pub noise: NoiseMode,
    pub projection_tol: f64,
    pub projection_max_iters: usize,
    /// Post-round the estimate to a balanced vector (see [`balance_signs`]).
    pub balance: bool,
}

impl WeakRecoveryConfig {
    pub fn new(d: f64, gamma: f64, noise: NoiseMode) -> Result<Self> {
        if !(d.is_finite() && gamma.is_finite()) || gamma * d <= 0.0 {
            return Err(RecoveryError::InvalidParameter(format!(
                "need gamma * d > 0, got d = {d}, gamma = {gamma}"
            )));
        }
        if let NoiseMode::Private(b) = noise {
            b.validate()?;
            if b.epsilon <= 0.0 || b.delta <= 0.0 {
                return Err(RecoveryError::InvalidParameter(
                    "private mode needs epsilon > 0 and delta > 0".into(),
                ));
            }
        }
        Ok(Self { d, gamma, noise, projection_tol: 1e-7, projection_max_iters: 5000, balance: false })
    }

    /// Entrywise noise variance `24/(n gamma d) * ln(2/delta) / eps^2`,
    /// zero in the non-private baseline.
    pub fn noise_variance(&self, n: usize) -> f64 {
        match self.noise {
            NoiseMode::NonPrivate => 0.0,
            NoiseMode::Private(b) => {
                24.0 / (n as f64 * self.gamma * self.d) * (2.0 / b.delta).ln()
                    / (b.epsilon * b.epsilon)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeakRecoveryOutput {
    pub labels: LabelVector,
    /// Standard deviation of the entrywise noise that was added.
    pub noise_sigma: f64,
    pub leading_eigenvalue: f64,
    pub projection: ProjectionReport,
}

/// Private weak recovery: project `Y(G)` onto `K`, add a symmetric Gaussian
/// noise matrix, and round the leading eigenvector to signs.
pub fn weak_recovery<R: Rng + ?Sized>(
    g: &Graph,
    cfg: &WeakRecoveryConfig,
    rng: &mut R,
) -> Result<WeakRecoveryOutput> {
    let n = g.n();
    let y = center_rescale(g, cfg.d, cfg.gamma);
    let proj = project_to_k(&y, cfg.projection_tol, cfg.projection_max_iters)?;
    if !proj.converged {
        return Err(RecoveryError::ProjectionNotConverged);
    }
    let sigma = cfg.noise_variance(n).sqrt();
    let x2 = if sigma > 0.0 {
        proj.result.add(&symmetric_gaussian(n, sigma, rng))
    } else {
        proj.result.clone()
    };
    let (lam, v) = leading_eigenpair(&x2, 1e-9)?;
    let labels = if cfg.balance {
        balance_signs(&v)
    } else {
        LabelVector::from_signs(v.as_slice())
    };
    Ok(WeakRecoveryOutput { labels, noise_sigma: sigma, leading_eigenvalue: lam, projection: proj })
}

/// Rounds an eigenvector to signs and then flips the fewest entries, those
/// with the smallest magnitudes in the majority sign class, until the label
/// sum is as close to zero as parity allows.
pub fn balance_signs(v: &DVector<f64>) -> LabelVector {
    let n = v.len();
    let mut labels: Vec<i8> = v.iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect();
    let sum: i64 = labels.iter().map(|&e| e as i64).sum();
    let flips = (sum.abs() / 2) as usize;
    if flips > 0 {
        let majority: i8 = if sum > 0 { 1 } else { -1 };
        let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == majority).collect();
        idx.sort_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap());
        for &i in idx.iter().take(flips) {
            labels[i] = -majority;
        }
    }
    LabelVector::new(labels).expect("sign labels are valid")
}

/// Per-vertex voting diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoteRecord {
    pub vertex: usize,
    /// Same-label neighbor count minus different-label neighbor count.
    pub z: i64,
    pub noise: f64,
    pub decision: i8,
}

fn majority_vote_with(
    g: &Graph,
    rough: &LabelVector,
    mut noise: impl FnMut(usize) -> f64,
) -> Result<(LabelVector, Vec<VoteRecord>)> {
    let n = g.n();
    if rough.len() != n {
        return Err(RecoveryError::InvalidParameter(format!(
            "rough estimate has {} labels for {} vertices",
            rough.len(),
            n
        )));
    }
    let adj = g.neighbor_lists();
    let mut labels = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for v in 0..n {
        let mut z = 0i64;
        for &u in &adj[v] {
            if rough.get(u as usize) == rough.get(v) {
                z += 1;
            } else {
                z -= 1;
            }
        }
        let w = noise(v);
        // sign(0) := +1
        let s: i8 = if z as f64 + w >= 0.0 { 1 } else { -1 };
        let decided = s * rough.get(v);
        labels.push(decided);
        records.push(VoteRecord { vertex: v, z, noise: w, decision: decided });
    }
    Ok((LabelVector::new(labels)?, records))
}

/// Private majority voting: each vertex keeps or flips its rough label by
/// the sign of its noisy neighborhood vote `Z_v + Lap(2/eps)`.
pub fn private_majority_vote<R: Rng + ?Sized>(
    g: &Graph,
    rough: &LabelVector,
    epsilon: f64,
    rng: &mut R,
) -> Result<(LabelVector, Vec<VoteRecord>)> {
    if !(epsilon > 0.0) {
        return Err(RecoveryError::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    let params = LaplaceParams::new(0.0, 2.0 / epsilon)?;
    majority_vote_with(g, rough, |_| dp::sample_laplace(params, rng))
}

/// The voting rule with the noise fixed at exactly zero; the degenerate
/// test hook and non-private baseline.
pub fn majority_vote_noiseless(
    g: &Graph,
    rough: &LabelVector,
) -> Result<(LabelVector, Vec<VoteRecord>)> {
    majority_vote_with(g, rough, |_| 0.0)
}

/// The theorem preconditions for private exact recovery, reported but not
/// enforced: desk-scale parameters routinely violate the constants yet
/// recover exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub sqrt_gap: f64,
    pub sqrt_gap_ok: bool,
    pub separation: f64,
    pub separation_required: f64,
    pub separation_ok: bool,
}

/// Checks `sqrt(alpha) - sqrt(beta) >= 16` and
/// `alpha - beta >= 500^2/eps^2 * ln(2/delta)/ln(n) + 64/eps`.
pub fn exact_recovery_admissibility(
    alpha: f64,
    beta: f64,
    budget: PrivacyBudget,
    n: usize,
) -> AdmissibilityReport {
    let sqrt_gap = alpha.sqrt() - beta.sqrt();
    let required = 500.0 * 500.0 / (budget.epsilon * budget.epsilon) * (2.0 / budget.delta).ln()
        / (n as f64).ln()
        + 64.0 / budget.epsilon;
    AdmissibilityReport {
        sqrt_gap,
        sqrt_gap_ok: sqrt_gap >= 16.0,
        separation: alpha - beta,
        separation_required: required,
        separation_ok: alpha - beta >= required,
    }
}

#[derive(Debug, Clone)]
pub struct ExactRecoveryOutput {
    pub labels: LabelVector,
    pub rough: LabelVector,
    /// Composition of the two stages: `(2 eps, delta)`.
    pub total_budget: PrivacyBudget,
    pub admissibility: AdmissibilityReport,
    pub vote_records: Vec<VoteRecord>,
}

/// Private exact recovery in the `(alpha, beta)` parameterization: split the
/// graph in half, run private weak recovery on the first half, and boost
/// with private majority voting on the second.
pub fn exact_recovery<R: Rng + ?Sized>(
    g: &Graph,
    alpha: f64,
    beta: f64,
    budget: PrivacyBudget,
    rng: &mut R,
) -> Result<ExactRecoveryOutput> {
    budget.validate()?;
    if budget.epsilon <= 0.0 || budget.delta <= 0.0 {
        return Err(RecoveryError::InvalidParameter(
            "exact recovery needs epsilon > 0 and delta > 0".into(),
        ));
    }
    let n = g.n();
    let (d, gamma) = alpha_beta_to_d_gamma(alpha, beta, n)?;
    if (1.0 + gamma) * d / n as f64 > 1.0 {
        return Err(RecoveryError::InvalidParameter(
            "edge probability exceeds 1 at these parameters".into(),
        ));
    }
    let (g1, g2) = split_graph(g, 0.5, rng);
    // The halves are themselves block models with half the degree scale.
    let cfg = WeakRecoveryConfig::new(d / 2.0, gamma, NoiseMode::Private(budget))?;
    let rough = weak_recovery(&g1, &cfg, rng)?;
    let (labels, vote_records) = private_majority_vote(&g2, &rough.labels, budget.epsilon, rng)?;
    let total_budget = compose(&[budget, PrivacyBudget { epsilon: budget.epsilon, delta: 0.0 }]);
    Ok(ExactRecoveryOutput {
        labels,
        rough: rough.labels,
        total_budget,
        admissibility: exact_recovery_admissibility(alpha, beta, budget, n),
        vote_records,
    })
}

/// Largest `n` for which exact exponential-mechanism enumeration is allowed.
pub const EXP_MECH_EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExpMechMode {
    /// Enumerate all `2^n` states and sample from the exact Gibbs law.
    Exact,
    /// Single-flip Metropolis chain with the same stationary law. Not
    /// covered by the exponential-mechanism privacy proof; flagged in the
    /// output metadata.
    Metropolis { chain_steps: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExpMechConfig {
    pub epsilon: f64,
    pub mode: ExpMechMode,
}

impl ExpMechConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(RecoveryError::InvalidParameter(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExpMechOutput {
    pub labels: LabelVector,
    /// True only for exact-mode sampling, which the privacy proof covers.
    pub pure_dp: bool,
    pub epsilon: f64,
}

fn state_labels(state: usize, n: usize) -> LabelVector {
    LabelVector::new((0..n).map(|i| if state >> i & 1 == 1 { 1 } else { -1 }).collect())
        .expect("bit labels are valid")
}

/// All `2^n` scores `s_G(x) = <x, Y(G) x>`, indexed by the bit pattern of
/// `x` (bit i set means `x_i = +1`). Evaluated with one Gray-code walk, so
/// the total cost is `O(2^n n)`.
fn enumerate_scores(g: &Graph, d: f64, gamma: f64) -> Vec<f64> {
    let n = g.n();
    let y = center_rescale(g, d, gamma);
    let ym = y.as_dmatrix();
    let mut x = DVector::<f64>::from_element(n, -1.0); // state 0: all bits clear
    let mut yx = ym * &x;
    let mut score = x.dot(&yx);
    let mut scores = vec![0.0f64; 1usize << n];
    let mut gray = 0usize;
    scores[gray] = score;
    for s in 1..(1usize << n) {
        let k = s.trailing_zeros() as usize;
        gray ^= 1 << k;
        let delta = -2.0 * x[k];
        // diag(Y) = 0, so the quadratic term vanishes.
        score += 2.0 * delta * yx[k];
        for i in 0..n {
            yx[i] += delta * ym[(i, k)];
        }
        x[k] += delta;
        scores[gray] = score;
    }
    scores
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact log-pmf of the exponential mechanism over `{-1, +1}^n`, indexed by
/// bit pattern. Log-weights are `eps/(2 Delta) * s_G(x)` with
/// `Delta = 2/(gamma d)`, normalized by log-sum-exp.
pub fn exp_mech_log_pmf(g: &Graph, d: f64, gamma: f64, epsilon: f64) -> Result<Vec<f64>> {
    let n = g.n();
    if n > EXP_MECH_EXACT_MAX_N {
        return Err(RecoveryError::TooLargeForExact { n, max: EXP_MECH_EXACT_MAX_N });
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(RecoveryError::InvalidParameter("epsilon must be >= 0".into()));
    }
    let coeff = epsilon * gamma * d / 4.0; // eps / (2 * (2/(gamma d)))
    let mut lw: Vec<f64> = enumerate_scores(g, d, gamma).iter().map(|&s| coeff * s).collect();
    let z = log_sum_exp(&lw);
    for v in lw.iter_mut() {
        *v -= z;
    }
    Ok(lw)
}

/// Exponential-mechanism recovery. Exact mode samples the Gibbs law over
/// all `2^n` sign vectors; Metropolis mode runs a single-flip chain with
/// the same stationary distribution.
pub fn exp_mech_recovery<R: Rng + ?Sized>(
    g: &Graph,
    d: f64,
    gamma: f64,
    cfg: &ExpMechConfig,
    rng: &mut R,
) -> Result<ExpMechOutput> {
    cfg.validate()?;
    let n = g.n();
    match cfg.mode {
        ExpMechMode::Exact => {
            let log_pmf = exp_mech_log_pmf(g, d, gamma, cfg.epsilon)?;
            let weights: Vec<f64> = log_pmf.iter().map(|&l| l.exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            Ok(ExpMechOutput { labels: state_labels(chosen, n), pure_dp: true, epsilon: cfg.epsilon })
        }
        ExpMechMode::Metropolis { chain_steps } => {
            let y = center_rescale(g, d, gamma);
            let ym = y.as_dmatrix();
            let coeff = cfg.epsilon * gamma * d / 4.0;
            let mut x = DVector::<f64>::from_fn(n, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
            let mut yx = ym * &x;
            for _ in 0..chain_steps {
                let k = rng.gen_range(0..n);
                let delta = -2.0 * x[k];
                let dscore = 2.0 * delta * yx[k];
                if dscore >= 0.0 || rng.gen::<f64>() < (coeff * dscore).exp() {
                    for i in 0..n {
                        yx[i] += delta * ym[(i, k)];
                    }
                    x[k] += delta;
                }
            }
            Ok(ExpMechOutput {
                labels: LabelVector::from_signs(x.as_slice()),
                pure_dp: false,
                epsilon: cfg.epsilon,
            })
        }
    }
}

/// The full inefficient algorithm: split the graph, sample a rough estimate
/// with the exponential mechanism on the first half (degree scale `d/2`),
/// and boost with private majority voting on the second half. Total budget
/// `2 eps` pure DP in exact mode.
pub fn exp_mech_recovery_boosted<R: Rng + ?Sized>(
    g: &Graph,
    d: f64,
    gamma: f64,
    cfg: &ExpMechConfig,
    rng: &mut R,
) -> Result<ExpMechOutput> {
    let (g1, g2) = split_graph(g, 0.5, rng);
    let rough = exp_mech_recovery(&g1, d / 2.0, gamma, cfg, rng)?;
    let (labels, _) = private_majority_vote(&g2, &rough.labels, cfg.epsilon, rng)?;
    Ok(ExpMechOutput { labels, pure_dp: rough.pure_dp, epsilon: 2.0 * cfg.epsilon })
}

/// Theorem preconditions for the exponential-mechanism guarantee, reported
/// rather than asserted; the two zeta-range conditions are mutually
/// satisfiable only at astronomically large `gamma^2 d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpMechAdmissibility {
    pub gamma_sqrt_d: f64,
    pub gamma_sqrt_d_ok: bool,
    pub zeta_floor: f64,
    pub zeta_floor_ok: bool,
    pub zeta_small_error_cap: f64,
    pub zeta_small_error_ok: bool,
    pub epsilon_required: f64,
    pub epsilon_ok: bool,
}

pub fn exp_mech_admissibility(
    gamma: f64,
    d: f64,
    zeta: f64,
    epsilon: f64,
) -> ExpMechAdmissibility {
    let gsd = gamma * d.sqrt();
    let zeta_floor = 2.0 * (-gamma * gamma * d / 512.0).exp();
    let cap = (-640.0f64).exp();
    let eps_req = 64.0 * (2.0 / zeta).ln() / (gamma * d);
    ExpMechAdmissibility {
        gamma_sqrt_d: gsd,
        gamma_sqrt_d_ok: gsd >= 12800.0,
        zeta_floor,
        zeta_floor_ok: zeta >= zeta_floor,
        zeta_small_error_cap: cap,
        zeta_small_error_ok: zeta <= cap,
        epsilon_required: eps_req,
        epsilon_ok: epsilon >= eps_req,
    }
}

/// Reference Monte Carlo harness used by tests and the sweep engine: sample
/// one block-model instance, run weak recovery, and report the label error.
pub fn weak_recovery_trial<R: Rng + ?Sized>(
    n: usize,
    d: f64,
    gamma: f64,
    noise: NoiseMode,
    rng: &mut R,
) -> Result<f64> {
    let labels = LabelVector::balanced_halves(n)?;
    let params = crate::sbm::SbmParams::new(n, d, gamma, labels.clone())?;
    let g = sample_sbm(&params, rng);
    let cfg = WeakRecoveryConfig::new(d, gamma, noise)?;
    let out = weak_recovery(&g, &cfg, rng)?;
    Ok(crate::sbm::err(&out.labels, &labels)?)
}
