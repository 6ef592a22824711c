//! Finite MDP data model.
//!
//! State-action pairs are flattened state-major, action-minor:
//! `(s₁,a₁), (s₁,a₂), …, (s_n,a_m)`, so pair `(s, a)` lives at index
//! `s·m + a`. The transition matrix has one row per pair and one column per
//! next state.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::ops::{Deref, DerefMut};
use std::path::Path;

use serde_json::Value;

use crate::error::{check_len, Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::SplitMix64;

/// Row-sum tolerance for transition rows.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Stream offset mixed into the seed for initial value draws, so that
/// `random_value_vector(seed)` is independent of `random_instance(seed)`.
pub const VALUE_STREAM: u64 = 0x5EED_0F00_D000_0001;

/// Action values `q`, one entry per state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector(Vec<f64>);

impl ValueVector {
    pub fn new(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ValueVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ValueVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ValueVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// One distribution over actions per state, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrix {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl PolicyMatrix {
    pub fn new(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        check_len("policy entries", n * m, data.len())?;
        for (s, row) in data.chunks(m.max(1)).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Domain(format!(
                    "policy row {s} is not a distribution: {row:?}"
                )));
            }
        }
        Ok(Self { n, m, data })
    }

    pub(crate) fn from_vec_unchecked(n: usize, m: usize, data: Vec<f64>) -> Self {
        Self { n, m, data }
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            data: vec![1.0 / m as f64; n * m],
        }
    }

    pub fn states(&self) -> usize {
        self.n
    }

    pub fn actions(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.m..(s + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.m)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// A finite discounted MDP.
///
/// Fields are public plain data so that malformed instances can be built and
/// checked with [`MdpInstance::validate`]; [`MdpInstance::new`] is the
/// checked constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpInstance {
    pub n: usize,
    pub m: usize,
    pub gamma: f64,
    /// `(n·m) × n`, rows indexed by state-action pair.
    pub transition: DenseMatrix,
    /// Length `n·m`.
    pub reward: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptySpace { n: usize, m: usize },
    TransitionShape { rows: usize, cols: usize },
    RewardLength { expected: usize, actual: usize },
    DiscountOutOfRange(f64),
    NegativeProbability { row: usize, col: usize, value: f64 },
    RowNotStochastic { row: usize, sum: f64 },
    NonFiniteReward { index: usize },
}

impl Violation {
    /// Name of the instance field the violation concerns.
    pub fn field(&self) -> &'static str {
        match self {
            Violation::EmptySpace { n: 0, .. } => "n",
            Violation::EmptySpace { .. } => "m",
            Violation::TransitionShape { .. }
            | Violation::NegativeProbability { .. }
            | Violation::RowNotStochastic { .. } => "transition",
            Violation::RewardLength { .. } | Violation::NonFiniteReward { .. } => "reward",
            Violation::DiscountOutOfRange(_) => "gamma",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpace { n, m } => {
                write!(f, "state and action counts must be positive (n={n}, m={m})")
            }
            Violation::TransitionShape { rows, cols } => {
                write!(f, "transition matrix has shape {rows}x{cols}")
            }
            Violation::RewardLength { expected, actual } => {
                write!(f, "reward has length {actual}, expected {expected}")
            }
            Violation::DiscountOutOfRange(g) => write!(f, "discount {g} is outside (0, 1)"),
            Violation::NegativeProbability { row, col, value } => {
                write!(f, "transition[{row}][{col}] = {value} is negative")
            }
            Violation::RowNotStochastic { row, sum } => {
                write!(
                    f,
                    "transition row {row} sums to {sum}, not 1 (row-stochastic violation)"
                )
            }
            Violation::NonFiniteReward { index } => write!(f, "reward[{index}] is not finite"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl MdpInstance {
    pub fn new(
        n: usize,
        m: usize,
        gamma: f64,
        transition: DenseMatrix,
        reward: Vec<f64>,
    ) -> Result<Self> {
        let inst = Self {
            n,
            m,
            gamma,
            transition,
            reward,
        };
        let report = inst.validate();
        if report.is_valid() {
            Ok(inst)
        } else {
            Err(Error::Argument(report.to_string()))
        }
    }

    /// Number of state-action pairs.
    #[inline]
    pub fn pairs(&self) -> usize {
        self.n * self.m
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.m + a
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.n == 0 || self.m == 0 {
            violations.push(Violation::EmptySpace {
                n: self.n,
                m: self.m,
            });
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            violations.push(Violation::DiscountOutOfRange(self.gamma));
        }
        let pairs = self.pairs();
        if self.transition.rows() != pairs || self.transition.cols() != self.n {
            violations.push(Violation::TransitionShape {
                rows: self.transition.rows(),
                cols: self.transition.cols(),
            });
        } else {
            for (row, probs) in self.transition.iter_rows().enumerate() {
                for (col, &value) in probs.iter().enumerate() {
                    if value < 0.0 {
                        violations.push(Violation::NegativeProbability { row, col, value });
                    }
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    violations.push(Violation::RowNotStochastic { row, sum });
                }
            }
        }
        if self.reward.len() != pairs {
            violations.push(Violation::RewardLength {
                expected: pairs,
                actual: self.reward.len(),
            });
        }
        for (index, r) in self.reward.iter().enumerate() {
            if !r.is_finite() {
                violations.push(Violation::NonFiniteReward { index });
            }
        }
        ValidationReport { violations }
    }

    /// Checks that `q` has one entry per state-action pair.
    pub(crate) fn check_values(&self, what: &'static str, q: &[f64]) -> Result<()> {
        check_len(what, self.pairs(), q.len())
    }

    pub fn to_json_string(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        let _ = writeln!(out, "  \"n\": {},", self.n);
        let _ = writeln!(out, "  \"m\": {},", self.m);
        let _ = writeln!(out, "  \"gamma\": {},", fmt_f64(self.gamma));
        out.push_str("  \"transition\": [\n");
        let rows = self.transition.rows();
        for (i, row) in self.transition.iter_rows().enumerate() {
            out.push_str("    [");
            push_joined(&mut out, row);
            out.push(']');
            if i + 1 < rows {
                out.push(',');
            }
            out.push('\n');
        }
        out.push_str("  ],\n");
        out.push_str("  \"reward\": [");
        push_joined(&mut out, &self.reward);
        out.push_str("]\n}\n");
        out
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            field: "<document>".into(),
            reason: e.to_string(),
        })?;
        let obj = root.as_object().ok_or_else(|| Error::Parse {
            field: "<document>".into(),
            reason: "top level must be an object".into(),
        })?;
        let get = |field: &str| {
            obj.get(field).ok_or_else(|| Error::Parse {
                field: field.into(),
                reason: "missing".into(),
            })
        };
        let n = parse_count(get("n")?, "n")?;
        let m = parse_count(get("m")?, "m")?;
        let gamma = parse_number(get("gamma")?, "gamma")?;
        let rows = get("transition")?.as_array().ok_or_else(|| Error::Parse {
            field: "transition".into(),
            reason: "expected an array of rows".into(),
        })?;
        let mut data = Vec::with_capacity(rows.len() * n);
        for (i, row) in rows.iter().enumerate() {
            let row = parse_numbers(row, "transition")?;
            if row.len() != n {
                return Err(Error::Parse {
                    field: "transition".into(),
                    reason: format!("row {i} has {} entries, expected {n}", row.len()),
                });
            }
            data.extend(row);
        }
        if rows.len() != n * m {
            return Err(Error::Parse {
                field: "transition".into(),
                reason: format!("{} rows, expected n*m = {}", rows.len(), n * m),
            });
        }
        let transition = DenseMatrix::new(n * m, n, data).map_err(|e| Error::Parse {
            field: "transition".into(),
            reason: e.to_string(),
        })?;
        let reward = parse_numbers(get("reward")?, "reward")?;
        let inst = Self {
            n,
            m,
            gamma,
            transition,
            reward,
        };
        let report = inst.validate();
        if let Some(first) = report.violations.first() {
            return Err(Error::Parse {
                field: first.field().into(),
                reason: report.to_string(),
            });
        }
        Ok(inst)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}

/// 17 significant digits, which round-trips every finite double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_joined(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&fmt_f64(*v));
    }
}

fn parse_count(v: &Value, field: &str) -> Result<usize> {
    v.as_u64()
        .filter(|&c| c >= 1)
        .map(|c| c as usize)
        .ok_or_else(|| Error::Parse {
            field: field.into(),
            reason: format!("expected a positive integer, got {v}"),
        })
}

fn parse_number(v: &Value, field: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::Parse {
        field: field.into(),
        reason: format!("expected a number, got {v}"),
    })
}

fn parse_numbers(v: &Value, field: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::Parse {
            field: field.into(),
            reason: "expected an array of numbers".into(),
        })?
        .iter()
        .map(|x| parse_number(x, field))
        .collect()
}

/// Seeded random instance.
///
/// Draw order from one SplitMix64 stream seeded with `seed`: for each
/// state-action row in flattened order, `n` standard exponentials normalized
/// by their sum (a flat Dirichlet row); then `n·m` rewards uniform on
/// `[0, 1)` in the same order.
pub fn random_instance(n: usize, m: usize, gamma: f64, seed: u64) -> Result<MdpInstance> {
    if n == 0 || m == 0 {
        return Err(Error::Argument(format!(
            "state and action counts must be positive (n={n}, m={m})"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Argument(format!(
            "discount {gamma} is outside (0, 1)"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let pairs = n * m;
    let mut data = Vec::with_capacity(pairs * n);
    let mut row = vec![0.0; n];
    for _ in 0..pairs {
        row.iter_mut().for_each(|v| *v = rng.next_exponential());
        let mut total: f64 = row.iter().sum();
        if total == 0.0 {
            // all draws exactly zero; fall back to uniform
            row.iter_mut().for_each(|v| *v = 1.0);
            total = n as f64;
        }
        data.extend(row.iter().map(|v| v / total));
    }
    let reward = (0..pairs).map(|_| rng.next_f64()).collect();
    let transition = DenseMatrix::new(pairs, n, data)?;
    MdpInstance::new(n, m, gamma, transition, reward)
        .map_err(|e| Error::Internal(format!("generated instance failed validation: {e}")))
}

/// Seeded values uniform on `[−1/(1−γ), 1/(1−γ))`, drawn from a stream
/// seeded with `seed ^ VALUE_STREAM`.
pub fn random_value_vector(n: usize, m: usize, gamma: f64, seed: u64) -> ValueVector {
    let bound = 1.0 / (1.0 - gamma);
    let mut rng = SplitMix64::new(seed ^ VALUE_STREAM);
    ValueVector((0..n * m).map(|_| rng.uniform(-bound, bound)).collect())
}
