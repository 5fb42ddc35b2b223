//! Basic differential-privacy mechanisms and composition accounting.
//!
//! Laplace noise for bounded L1 sensitivity, the negatively truncated
//! Laplace distribution used by private threshold gates, the Gaussian
//! mechanism for bounded L2 sensitivity, and a sparse high-dimensional
//! private histogram learner. Samplers use inverse-CDF transforms so a
//! fixed RNG stream fully determines the output.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dataset size mismatch: config says {expected}, got {actual} points")]
    SizeMismatch { expected: usize, actual: usize },
}

pub type Result<T> = std::result::Result<T, DpError>;

/// An (epsilon, delta) privacy budget.
///
/// Composition is additive in both coordinates, with delta saturating at 1
/// since it is a probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let b = Self { epsilon, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(DpError::InvalidParameter(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if !self.delta.is_finite() || !(0.0..=1.0).contains(&self.delta) {
            return Err(DpError::InvalidParameter(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Sequential composition: budgets add, delta saturates at 1.
pub fn compose(budgets: &[PrivacyBudget]) -> PrivacyBudget {
    let epsilon = budgets.iter().map(|b| b.epsilon).sum();
    let delta: f64 = budgets.iter().map(|b| b.delta).sum();
    PrivacyBudget { epsilon, delta: delta.min(1.0) }
}

/// Laplace distribution with location `mu` and scale `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceParams {
    pub mu: f64,
    pub b: f64,
}

impl LaplaceParams {
    pub fn new(mu: f64, b: f64) -> Result<Self> {
        if !b.is_finite() || b <= 0.0 {
            return Err(DpError::InvalidParameter(format!("Laplace scale must be > 0, got {b}")));
        }
        if !mu.is_finite() {
            return Err(DpError::InvalidParameter("Laplace location must be finite".into()));
        }
        Ok(Self { mu, b })
    }
}

/// Log-density of Lap(mu, b) at `x`.
pub fn laplace_log_pdf(x: f64, mu: f64, b: f64) -> f64 {
    -((x - mu).abs() / b) - (2.0 * b).ln()
}

/// CDF of Lap(mu, b) at `x`.
pub fn laplace_cdf(x: f64, mu: f64, b: f64) -> f64 {
    if x <= mu {
        0.5 * ((x - mu) / b).exp()
    } else {
        1.0 - 0.5 * (-(x - mu) / b).exp()
    }
}

/// Draws from Lap(mu, b) by inverting the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(params: LaplaceParams, rng: &mut R) -> f64 {
    // u in [0, 1); clamp away from exact 0 so the log stays finite.
    let u = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let centered = u - 0.5;
    // Inverse CDF: mu - b * sign(c) * ln(1 - 2|c|).
    params.mu - params.b * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// The Laplace mechanism: `value + Lap(0, l1_sensitivity / epsilon)`.
///
/// Zero sensitivity is the degenerate case and returns `value` exactly.
pub fn add_laplace<R: Rng + ?Sized>(
    value: f64,
    l1_sensitivity: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<f64> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(DpError::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !l1_sensitivity.is_finite() || l1_sensitivity < 0.0 {
        return Err(DpError::InvalidParameter(format!(
            "l1 sensitivity must be >= 0, got {l1_sensitivity}"
        )));
    }
    if l1_sensitivity == 0.0 {
        return Ok(value);
    }
    let params = LaplaceParams::new(0.0, l1_sensitivity / epsilon)?;
    Ok(value + sample_laplace(params, rng))
}

/// Laplace with negative location, conditioned on being non-positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedLaplaceParams {
    pub mu: f64,
    pub b: f64,
}

impl TruncatedLaplaceParams {
    pub fn new(mu: f64, b: f64) -> Result<Self> {
        if !mu.is_finite() || mu >= 0.0 {
            return Err(DpError::InvalidParameter(format!(
                "truncated Laplace location must be < 0, got {mu}"
            )));
        }
        if !b.is_finite() || b <= 0.0 {
            return Err(DpError::InvalidParameter(format!(
                "truncated Laplace scale must be > 0, got {b}"
            )));
        }
        Ok(Self { mu, b })
    }

    /// Parameters of the truncated-Laplace mechanism for a query of the
    /// given L1 sensitivity: location `-s (1 + ln(1/delta) / eps)`, scale
    /// `s / eps`.
    pub fn for_mechanism(l1_sensitivity: f64, budget: PrivacyBudget) -> Result<Self> {
        budget.validate()?;
        if budget.epsilon <= 0.0 || budget.delta <= 0.0 {
            return Err(DpError::InvalidParameter(
                "truncated Laplace mechanism needs epsilon > 0 and delta > 0".into(),
            ));
        }
        if !(l1_sensitivity > 0.0) {
            return Err(DpError::InvalidParameter("sensitivity must be > 0".into()));
        }
        Self::new(
            -l1_sensitivity * (1.0 + (1.0 / budget.delta).ln() / budget.epsilon),
            l1_sensitivity / budget.epsilon,
        )
    }
}

/// Draws from tLap(mu, b) (Laplace conditioned on x <= 0) by inverse CDF.
pub fn sample_truncated_laplace<R: Rng + ?Sized>(
    params: TruncatedLaplaceParams,
    rng: &mut R,
) -> f64 {
    // Mass of Lap(mu, b) on (-inf, 0]; mu < 0 puts 0 on the upper branch.
    let mass = 1.0 - 0.5 * (params.mu / params.b).exp();
    let u = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let t = u * mass;
    let x = if t <= 0.5 {
        params.mu + params.b * (2.0 * t).ln()
    } else {
        params.mu - params.b * (2.0 * (1.0 - t)).ln()
    };
    let x = x.min(0.0);
    debug_assert!(x <= 0.0, "truncated Laplace sample must be non-positive");
    x
}

/// Standard deviation of the Gaussian mechanism:
/// `sigma^2 = l2_sensitivity^2 * 2 ln(2/delta) / epsilon^2`.
pub fn gaussian_noise_scale(l2_sensitivity: f64, budget: PrivacyBudget) -> Result<f64> {
    budget.validate()?;
    if budget.epsilon <= 0.0 {
        return Err(DpError::InvalidParameter("Gaussian mechanism needs epsilon > 0".into()));
    }
    if budget.delta <= 0.0 {
        return Err(DpError::InvalidParameter(
            "Gaussian mechanism gives approximate DP only; delta must be > 0".into(),
        ));
    }
    if !l2_sensitivity.is_finite() || l2_sensitivity < 0.0 {
        return Err(DpError::InvalidParameter(format!(
            "l2 sensitivity must be >= 0, got {l2_sensitivity}"
        )));
    }
    Ok(l2_sensitivity * (2.0 * (2.0 / budget.delta).ln()).sqrt() / budget.epsilon)
}

/// Parameters of the private histogram learner.
///
/// Bins partition each axis into half-open intervals
/// `[offset + (i-1) * bin_width, offset + i * bin_width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    /// Grid offset, in `[0, bin_width)`.
    pub offset: f64,
    pub bin_width: f64,
    /// Accuracy target of the learner's guarantee.
    pub alpha: f64,
    /// Failure probability of the learner's guarantee.
    pub beta: f64,
    pub budget: PrivacyBudget,
    /// Dataset size the guarantee refers to.
    pub n: usize,
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.bin_width.is_finite() || self.bin_width <= 0.0 {
            return Err(DpError::InvalidParameter(format!(
                "bin width must be > 0, got {}",
                self.bin_width
            )));
        }
        if !self.offset.is_finite() || self.offset < 0.0 || self.offset >= self.bin_width {
            return Err(DpError::InvalidParameter(format!(
                "offset must lie in [0, bin_width), got {}",
                self.offset
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v <= 0.0 || v >= 1.0 {
                return Err(DpError::InvalidParameter(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        self.budget.validate()?;
        if self.budget.epsilon <= 0.0 || self.budget.delta <= 0.0 {
            return Err(DpError::InvalidParameter(
                "histogram learner needs epsilon > 0 and delta > 0".into(),
            ));
        }
        Ok(())
    }

    /// Whether `n` is large enough for the accuracy guarantee
    /// (`n >= 8/(eps*alpha) * ln(2/(delta*beta))`).
    pub fn meets_accuracy_precondition(&self) -> bool {
        let needed =
            8.0 / (self.budget.epsilon * self.alpha) * (2.0 / (self.budget.delta * self.beta)).ln();
        self.n as f64 >= needed
    }
}

/// Index of the half-open interval containing `x`:
/// `offset + (i-1) * width <= x < offset + i * width`.
pub fn bin_index(x: f64, offset: f64, width: f64) -> i64 {
    ((x - offset) / width).floor() as i64 + 1
}

/// One released histogram cell, for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_indices: Vec<i64>,
    pub frequency: f64,
}

/// The stability-based private histogram learner.
///
/// Empty bins stay exactly zero, every occupied bin gets `Lap(0, 2/(n*eps))`
/// noise on its frequency, and noisy frequencies at or below
/// `3 ln(2/delta) / (eps * n)` are zeroed. Only surviving bins are
/// materialized, so the output has at most `n` entries.
pub fn histogram_learner<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    cfg: &HistogramConfig,
    rng: &mut R,
) -> Result<BTreeMap<Vec<i64>, f64>> {
    cfg.validate()?;
    if cfg.n != points.len() {
        return Err(DpError::SizeMismatch { expected: cfg.n, actual: points.len() });
    }
    let mut out = BTreeMap::new();
    if points.is_empty() {
        return Ok(out);
    }
    let dim = points[0].len();
    let mut counts: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
    for p in points {
        if p.len() != dim {
            return Err(DpError::InvalidParameter("points must share one dimension".into()));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(DpError::InvalidParameter("points must be finite".into()));
        }
        let key: Vec<i64> =
            p.iter().map(|&x| bin_index(x, cfg.offset, cfg.bin_width)).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    let n = points.len() as f64;
    let eps = cfg.budget.epsilon;
    let noise = LaplaceParams::new(0.0, 2.0 / (n * eps))?;
    let cutoff = 3.0 * (2.0 / cfg.budget.delta).ln() / (eps * n);
    // BTreeMap iteration order is fixed, so the noise draws are reproducible.
    for (key, count) in counts {
        let noisy = count as f64 / n + sample_laplace(noise, rng);
        if noisy > cutoff {
            out.insert(key, noisy);
        }
    }
    Ok(out)
}

/// Renders a histogram as serializable records.
pub fn histogram_to_bins(hist: &BTreeMap<Vec<i64>, f64>) -> Vec<HistogramBin> {
    hist.iter()
        .map(|(k, &v)| HistogramBin { bin_indices: k.clone(), frequency: v })
        .collect()
}
