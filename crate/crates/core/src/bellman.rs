//! The smoothed Bellman map and its derivatives.
//!
//! ```text
//! F(q)  = γ P f(q) + r − q          f(q)_s = max_Ω q(s,·)
//! F'(q) = γ P ∇f(q) − I             ∇f(q)  block-diagonal, row s = ∇max_Ω q(s,·)
//! F(q)  = F'(q) q + γ P e(q) + r    e(q)_s = −Ω(∇max_Ω q(s,·)) / N
//! ```
//!
//! `γ P ∇f(q)` is row-stochastic up to the factor `γ`; most callers only need
//! its action on a vector, which [`Linearization::propagate`] computes without
//! materializing the matrix.

use crate::error::{check_len, Result};
use crate::linalg::DenseMatrix;
use crate::mdp::{MdpInstance, PolicyMatrix, ValueVector};
use crate::regularizer::RegularizerSpec;

/// Per-state pieces of the decomposition `f(q) = ∇f(q) q + e(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BellmanParts {
    /// `f(q)`, length `n`.
    pub f_omega: Vec<f64>,
    /// `∇f(q)`, shape `n × (n·m)`, zero outside each state's block.
    pub grad_f_omega: DenseMatrix,
    /// `e(q)`, length `n`.
    pub e_omega: Vec<f64>,
}

/// Everything needed to linearize `F` at one point.
#[derive(Debug, Clone)]
pub struct Linearization<'a> {
    instance: &'a MdpInstance,
    /// `f(q)`.
    pub f_omega: Vec<f64>,
    /// `e(q)`.
    pub e_omega: Vec<f64>,
    /// Greedy policy, i.e. the rows of `∇f(q)`.
    pub policy: PolicyMatrix,
    /// `F(q)`.
    pub residual: ValueVector,
}

impl<'a> Linearization<'a> {
    pub fn at(q: &[f64], instance: &'a MdpInstance, reg: &RegularizerSpec) -> Result<Self> {
        instance.check_values("value vector", q)?;
        let (n, m) = (instance.n, instance.m);
        let mut f_omega = Vec::with_capacity(n);
        let mut e_omega = Vec::with_capacity(n);
        let mut policy = Vec::with_capacity(n * m);
        for row in q.chunks(m) {
            let out = reg.evaluate(row)?;
            e_omega.push(-reg.omega_unchecked(&out.gradient) / reg.smoothing_strength());
            f_omega.push(out.value);
            policy.extend_from_slice(&out.gradient);
        }
        let mut residual = discounted_expectation(instance, &f_omega);
        for ((out, r), qi) in residual.iter_mut().zip(&instance.reward).zip(q) {
            *out += r - qi;
        }
        Ok(Self {
            instance,
            f_omega,
            e_omega,
            policy: PolicyMatrix::from_vec_unchecked(n, m, policy),
            residual: ValueVector::new(residual),
        })
    }

    pub fn instance(&self) -> &MdpInstance {
        self.instance
    }

    /// `γ P ∇f(q) v`.
    pub fn propagate(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.instance.check_values("propagated vector", v)?;
        let per_state: Vec<f64> = self
            .policy
            .rows()
            .zip(v.chunks(self.instance.m))
            .map(|(pi, vs)| pi.iter().zip(vs).map(|(p, x)| p * x).sum())
            .collect();
        Ok(discounted_expectation(self.instance, &per_state))
    }

    /// `γ P ∇f(q)` as a dense `(n·m) × (n·m)` matrix.
    pub fn propagator_matrix(&self) -> DenseMatrix {
        let inst = self.instance;
        let (n, m) = (inst.n, inst.m);
        let mut out = DenseMatrix::zeros(n * m, n * m);
        for i in 0..n * m {
            let probs = inst.transition.row(i);
            let dst = out.row_mut(i);
            for (s, &p) in probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let w = inst.gamma * p;
                for (d, pi) in dst[s * m..(s + 1) * m].iter_mut().zip(self.policy.row(s)) {
                    *d = w * pi;
                }
            }
        }
        out
    }

    /// `F'(q) = γ P ∇f(q) − I`.
    pub fn jacobian(&self) -> DenseMatrix {
        let mut j = self.propagator_matrix();
        for i in 0..j.rows() {
            let v = j.get(i, i) - 1.0;
            j.set(i, i, v);
        }
        j
    }

    pub fn parts(&self) -> BellmanParts {
        let (n, m) = (self.instance.n, self.instance.m);
        let mut grad = DenseMatrix::zeros(n, n * m);
        for s in 0..n {
            grad.row_mut(s)[s * m..(s + 1) * m].copy_from_slice(self.policy.row(s));
        }
        BellmanParts {
            f_omega: self.f_omega.clone(),
            grad_f_omega: grad,
            e_omega: self.e_omega.clone(),
        }
    }
}

/// `γ P x` for a per-state vector `x`.
fn discounted_expectation(instance: &MdpInstance, per_state: &[f64]) -> Vec<f64> {
    instance
        .transition
        .iter_rows()
        .map(|probs| instance.gamma * probs.iter().zip(per_state).map(|(p, x)| p * x).sum::<f64>())
        .collect()
}

/// `F(q) = γ P f(q) + r − q`.
pub fn residual_f(q: &[f64], instance: &MdpInstance, reg: &RegularizerSpec) -> Result<ValueVector> {
    Ok(Linearization::at(q, instance, reg)?.residual)
}

/// `F'(q) = γ P ∇f(q) − I`.
pub fn jacobian(q: &[f64], instance: &MdpInstance, reg: &RegularizerSpec) -> Result<DenseMatrix> {
    Ok(Linearization::at(q, instance, reg)?.jacobian())
}

pub fn decomposition_parts(
    q: &[f64],
    instance: &MdpInstance,
    reg: &RegularizerSpec,
) -> Result<BellmanParts> {
    Ok(Linearization::at(q, instance, reg)?.parts())
}

/// Regularized self-consistency operator for a fixed policy:
///
/// ```text
/// T^π(q)(s,a) = r(s,a) + γ Σ_{s'} p(s'|s,a) (⟨π(·|s'), q(s',·)⟩ − Ω(π(·|s'))/N)
/// ```
pub fn apply_self_consistency(
    q: &[f64],
    policy: &PolicyMatrix,
    instance: &MdpInstance,
    reg: &RegularizerSpec,
) -> Result<ValueVector> {
    instance.check_values("value vector", q)?;
    check_len("policy states", instance.n, policy.states())?;
    check_len("policy actions", instance.m, policy.actions())?;
    let per_state: Vec<f64> = policy
        .rows()
        .zip(q.chunks(instance.m))
        .map(|(pi, qs)| {
            let inner: f64 = pi.iter().zip(qs).map(|(p, x)| p * x).sum();
            inner - reg.omega_unchecked(pi) / reg.smoothing_strength()
        })
        .collect();
    let mut out = discounted_expectation(instance, &per_state);
    for (o, r) in out.iter_mut().zip(&instance.reward) {
        *o += r;
    }
    Ok(ValueVector::new(out))
}

/// Regularized Bellman operator `B(q) = r + γ P f(q)`.
pub fn apply_bellman(
    q: &[f64],
    instance: &MdpInstance,
    reg: &RegularizerSpec,
) -> Result<ValueVector> {
    let lin = Linearization::at(q, instance, reg)?;
    let mut out = lin.residual.into_inner();
    for (o, qi) in out.iter_mut().zip(q) {
        *o += qi;
    }
    Ok(ValueVector::new(out))
}

/// Row `s` is `∇max_Ω q(s,·)`, the unique maximizer of the regularized
/// one-step objective.
pub fn greedy_policy(
    q: &[f64],
    instance: &MdpInstance,
    reg: &RegularizerSpec,
) -> Result<PolicyMatrix> {
    Ok(Linearization::at(q, instance, reg)?.policy)
}
