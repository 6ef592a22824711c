//! Smoothed max operators over the probability simplex.
//!
//! For a strongly convex regularizer `Ω` and smoothing strength `N > 0`,
//!
//! ```text
//! max_Ω(x) = max_{p ∈ Δ} ⟨p, x⟩ − Ω(p) / N
//! ```
//!
//! and `∇max_Ω(x)` is the maximizing distribution. Two regularizers are
//! provided, both 1-strongly convex:
//!
//! * Shannon, `Ω(p) = Σ p_i ln p_i`: `max_Ω` is log-sum-exp of `N x` scaled
//!   by `1/N`, the gradient is `softmax(N x)`.
//! * Tsallis, `Ω(p) = (Σ p_i² − 1) / 2`: the gradient is `sparsemax(N x)`,
//!   the Euclidean projection of `N x` onto the simplex. The value is
//!   obtained by substituting that projection back into the objective.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tolerance for accepting externally supplied distributions.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegularizerKind {
    Shannon,
    Tsallis,
}

impl RegularizerKind {
    pub fn name(self) -> &'static str {
        match self {
            RegularizerKind::Shannon => "shannon",
            RegularizerKind::Tsallis => "tsallis",
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shannon" => Ok(RegularizerKind::Shannon),
            "tsallis" => Ok(RegularizerKind::Tsallis),
            other => Err(Error::Argument(format!("unknown regularizer `{other}`"))),
        }
    }
}

/// A regularizer together with its smoothing strength `N` and
/// strong-convexity modulus `μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerSpec {
    kind: RegularizerKind,
    smoothing_strength: f64,
    strong_convexity: f64,
}

impl RegularizerSpec {
    pub fn new(kind: RegularizerKind, smoothing_strength: f64) -> Result<Self> {
        if !(smoothing_strength.is_finite() && smoothing_strength > 0.0) {
            return Err(Error::Argument(format!(
                "smoothing strength must be positive and finite, got {smoothing_strength}"
            )));
        }
        Ok(Self {
            kind,
            smoothing_strength,
            strong_convexity: 1.0,
        })
    }

    pub fn shannon(smoothing_strength: f64) -> Result<Self> {
        Self::new(RegularizerKind::Shannon, smoothing_strength)
    }

    pub fn tsallis(smoothing_strength: f64) -> Result<Self> {
        Self::new(RegularizerKind::Tsallis, smoothing_strength)
    }

    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    /// `N`.
    pub fn smoothing_strength(&self) -> f64 {
        self.smoothing_strength
    }

    /// `μ`.
    pub fn strong_convexity(&self) -> f64 {
        self.strong_convexity
    }

    /// Lipschitz constant `N/μ` of the gradient in the 2-norm.
    pub fn gradient_lipschitz(&self) -> f64 {
        self.smoothing_strength / self.strong_convexity
    }

    /// `sup_p −Ω(p)/N` over the m-simplex, i.e. the largest gap between
    /// `max_Ω(x)` and `max(x)`.
    pub fn max_gap(&self, m: usize) -> f64 {
        let m = m as f64;
        match self.kind {
            RegularizerKind::Shannon => m.ln() / self.smoothing_strength,
            RegularizerKind::Tsallis => (1.0 - 1.0 / m) / (2.0 * self.smoothing_strength),
        }
    }

    /// Value and maximizer of the smoothed max in one pass.
    pub fn evaluate(&self, x: &[f64]) -> Result<SmoothedMax> {
        check_input(x)?;
        Ok(self.evaluate_unchecked(x))
    }

    pub(crate) fn evaluate_unchecked(&self, x: &[f64]) -> SmoothedMax {
        let n = self.smoothing_strength;
        match self.kind {
            RegularizerKind::Shannon => {
                let scaled: Vec<f64> = x.iter().map(|v| n * v).collect();
                let (lse, probs) = log_sum_exp_with_softmax(&scaled);
                SmoothedMax {
                    value: lse / n,
                    gradient: ProbabilityVector(probs),
                }
            }
            RegularizerKind::Tsallis => {
                let scaled: Vec<f64> = x.iter().map(|v| n * v).collect();
                let p = sparsemax(&scaled);
                let inner: f64 = p.iter().zip(x).map(|(a, b)| a * b).sum();
                let value = inner - tsallis_entropy(&p) / n;
                SmoothedMax {
                    value,
                    gradient: ProbabilityVector(p),
                }
            }
        }
    }

    /// `Ω(p)` without the `1/N` factor, for distributions already known to
    /// lie on the simplex.
    pub(crate) fn omega_unchecked(&self, p: &[f64]) -> f64 {
        match self.kind {
            RegularizerKind::Shannon => shannon_entropy(p),
            RegularizerKind::Tsallis => tsallis_entropy(p),
        }
    }
}

/// Output of [`RegularizerSpec::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMax {
    pub value: f64,
    pub gradient: ProbabilityVector,
}

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates nonnegativity and unit sum within [`SIMPLEX_TOLERANCE`].
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        check_simplex(&entries)?;
        Ok(Self(entries))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbabilityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_input(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Domain("smoothed max of an empty vector".into()));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite entry {} at index {i}",
            x[i]
        )));
    }
    Ok(())
}

pub(crate) fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain("empty distribution".into()));
    }
    if let Some(i) = p
        .iter()
        .position(|v| !v.is_finite() || *v < -SIMPLEX_TOLERANCE)
    {
        return Err(Error::Domain(format!(
            "distribution entry {i} is {} (must be nonnegative)",
            p[i]
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::Domain(format!("distribution sums to {sum}, not 1")));
    }
    Ok(())
}

/// `max_Ω(x)`.
pub fn smoothed_max(x: &[f64], reg: &RegularizerSpec) -> Result<f64> {
    Ok(reg.evaluate(x)?.value)
}

/// `∇max_Ω(x)`: softmax for Shannon, sparsemax for Tsallis.
pub fn smoothed_max_gradient(x: &[f64], reg: &RegularizerSpec) -> Result<ProbabilityVector> {
    Ok(reg.evaluate(x)?.gradient)
}

/// `Ω(p)` (not divided by `N`). Shannon uses `0 ln 0 = 0`.
pub fn regularizer_value(p: &[f64], reg: &RegularizerSpec) -> Result<f64> {
    check_simplex(p)?;
    Ok(reg.omega_unchecked(p))
}

fn shannon_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

fn tsallis_entropy(p: &[f64]) -> f64 {
    0.5 * (p.iter().map(|v| v * v).sum::<f64>() - 1.0)
}

/// Log-sum-exp and softmax of `z`, shifted by `max(z)`.
pub fn log_sum_exp_with_softmax(z: &[f64]) -> (f64, Vec<f64>) {
    let shift = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = z.iter().map(|v| (v - shift).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= total);
    (shift + total.ln(), probs)
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    log_sum_exp_with_softmax(z).0
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_sum_exp_with_softmax(z).1
}

/// Euclidean projection of `z` onto the probability simplex.
///
/// Sort descending, find the largest `k` with `1 + k z_(k) > Σ_{j≤k} z_(j)`,
/// threshold `τ = (Σ_{j≤k} z_(j) − 1) / k`, output `max(z − τ, 0)`.
pub fn sparsemax(z: &[f64]) -> Vec<f64> {
    let mut sorted = z.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut support_sum = sorted[0];
    let mut support = 1;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let k1 = (k + 1) as f64;
        if 1.0 + k1 * v > cumsum {
            support = k + 1;
            support_sum = cumsum;
        }
    }
    let tau = (support_sum - 1.0) / support as f64;
    z.iter().map(|v| (v - tau).max(0.0)).collect()
}
