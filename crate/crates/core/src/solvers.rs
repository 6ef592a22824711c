//! Regularized value, policy and modified policy iteration.
//!
//! All three are Newton-type iterations on `F(q) = 0`:
//!
//! * PI is exact Newton: `q⁺ = q − F'(q)⁻¹ F(q)`, one LU solve per step.
//! * MPI with `M` evaluation sweeps is inexact Newton with the linear system
//!   truncated after `M` Neumann terms:
//!   `q⁺ = q + Σ_{i<M} (γP∇f(q))ⁱ F(q)`, leaving the residual
//!   `r = (γP∇f(q))ᴹ F(q)` in `F'(q) s = −F(q) + r`.
//! * VI is MPI with `M = 1`, i.e. `q⁺ = B(q)`.

use std::fmt;
use std::str::FromStr;

use crate::bellman::{apply_self_consistency, Linearization};
use crate::error::{Error, Result};
use crate::linalg::{inf_dist, inf_norm_vec, lu_solve};
use crate::mdp::{MdpInstance, PolicyMatrix, ValueVector};
use crate::regularizer::RegularizerSpec;

/// Residual threshold for the reference solution.
pub const REFERENCE_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    ValueIteration,
    PolicyIteration,
    ModifiedPolicyIteration,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ValueIteration => "vi",
            Algorithm::PolicyIteration => "pi",
            Algorithm::ModifiedPolicyIteration => "mpi",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vi" => Ok(Algorithm::ValueIteration),
            "pi" => Ok(Algorithm::PolicyIteration),
            "mpi" => Ok(Algorithm::ModifiedPolicyIteration),
            other => Err(Error::Argument(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Evaluation sweeps `M` per iteration. Ignored by PI, forced to 1 by VI.
    pub pev_steps: usize,
    /// Stop once `‖F(q_k)‖∞ ≤ tolerance`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Keep every iterate and step in the trace.
    pub record_trace: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            pev_steps: 1,
            tolerance: 1e-10,
            max_iterations: 1000,
            record_trace: true,
        }
    }

    pub fn policy_iteration() -> Self {
        Self::new(Algorithm::PolicyIteration)
    }

    pub fn value_iteration() -> Self {
        Self::new(Algorithm::ValueIteration)
    }

    pub fn modified_policy_iteration(pev_steps: usize) -> Self {
        Self {
            pev_steps,
            ..Self::new(Algorithm::ModifiedPolicyIteration)
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_record_trace(mut self, record: bool) -> Self {
        self.record_trace = record;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Argument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.pev_steps == 0 {
            return Err(Error::Argument(
                "evaluation steps M must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// `M` actually used, `None` for exact policy evaluation.
    pub fn effective_pev_steps(&self) -> Option<usize> {
        match self.algorithm {
            Algorithm::PolicyIteration => None,
            Algorithm::ValueIteration => Some(1),
            Algorithm::ModifiedPolicyIteration => Some(self.pev_steps),
        }
    }
}

/// Per-iteration record of a solver run.
///
/// `residual_norms` and `errors_inf` have one entry per iterate
/// (`iterations + 1`); `steps` and `inexact_residual_norms` one per step.
/// Iterates and steps are only kept when the config asks for a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub algorithm: Algorithm,
    pub pev_steps: Option<usize>,
    pub iterates: Vec<ValueVector>,
    pub residual_norms: Vec<f64>,
    /// `‖q_* − q_k‖∞`, empty unless a reference was supplied.
    pub errors_inf: Vec<f64>,
    /// `‖r_k‖∞` of the inexact Newton residual, empty for PI.
    pub inexact_residual_norms: Vec<f64>,
    pub steps: Vec<ValueVector>,
    pub iterations: usize,
    pub converged: bool,
    pub final_q: ValueVector,
}

impl SolverTrace {
    pub fn final_residual(&self) -> f64 {
        self.residual_norms.last().copied().unwrap_or(f64::NAN)
    }
}

/// `q − F'(q)⁻¹ F(q)`.
pub fn newton_step(
    q: &[f64],
    instance: &MdpInstance,
    reg: &RegularizerSpec,
) -> Result<ValueVector> {
    let lin = Linearization::at(q, instance, reg)?;
    let step = newton_direction(&lin)?;
    Ok(add(q, &step))
}

fn newton_direction(lin: &Linearization<'_>) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = lin.residual.iter().map(|v| -v).collect();
    lu_solve(&lin.jacobian(), &rhs).map_err(|e| match e {
        Error::Singular { .. } => Error::Internal(format!("Newton system is singular: {e}")),
        other => other,
    })
}

/// Returns `(Σ_{i<M} Jⁱ F, Jᴹ F)` with `J = γP∇f(q)`, using `M` products.
fn truncated_neumann(lin: &Linearization<'_>, pev_steps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut term = lin.residual.to_vec();
    let mut sum = vec![0.0; term.len()];
    for _ in 0..pev_steps {
        sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
        term = lin.propagate(&term)?;
    }
    Ok((sum, term))
}

fn check_pev_steps(pev_steps: usize) -> Result<()> {
    if pev_steps == 0 {
        Err(Error::Argument(
            "evaluation steps M must be at least 1".into(),
        ))
    } else {
        Ok(())
    }
}

/// `(T^π)ᴹ(q)` for the greedy policy `π` at `q`, in closed form:
/// `q + Σ_{i<M} (γP∇f(q))ⁱ F(q)`.
pub fn pev_closed_form(
    q: &[f64],
    pev_steps: usize,
    instance: &MdpInstance,
    reg: &RegularizerSpec,
) -> Result<ValueVector> {
    check_pev_steps(pev_steps)?;
    let lin = Linearization::at(q, instance, reg)?;
    let (sum, _) = truncated_neumann(&lin, pev_steps)?;
    Ok(add(q, &sum))
}

/// Inexact Newton residual `(γP∇f(q))ᴹ F(q)` of one MPI step.
pub fn mpi_residual(
    q: &[f64],
    pev_steps: usize,
    instance: &MdpInstance,
    reg: &RegularizerSpec,
) -> Result<ValueVector> {
    check_pev_steps(pev_steps)?;
    let lin = Linearization::at(q, instance, reg)?;
    let (_, rest) = truncated_neumann(&lin, pev_steps)?;
    Ok(ValueVector::new(rest))
}

fn add(q: &[f64], step: &[f64]) -> ValueVector {
    ValueVector::new(q.iter().zip(step).map(|(a, b)| a + b).collect())
}

/// Runs the configured iteration from `q0` until `‖F(q_k)‖∞ ≤ tolerance` or
/// `max_iterations` steps. Hitting the cap is reported through
/// `converged = false`, not as an error.
pub fn run(
    instance: &MdpInstance,
    reg: &RegularizerSpec,
    config: &SolverConfig,
    q0: &[f64],
    reference: Option<&[f64]>,
) -> Result<SolverTrace> {
    config.validate()?;
    instance.check_values("initial values", q0)?;
    if let Some(r) = reference {
        instance.check_values("reference values", r)?;
    }
    let pev_steps = config.effective_pev_steps();
    let mut trace = SolverTrace {
        algorithm: config.algorithm,
        pev_steps,
        iterates: Vec::new(),
        residual_norms: Vec::new(),
        errors_inf: Vec::new(),
        inexact_residual_norms: Vec::new(),
        steps: Vec::new(),
        iterations: 0,
        converged: false,
        final_q: ValueVector::new(q0.to_vec()),
    };
    let mut q = ValueVector::new(q0.to_vec());
    loop {
        let lin = Linearization::at(&q, instance, reg)?;
        let residual = inf_norm_vec(&lin.residual);
        trace.residual_norms.push(residual);
        if let Some(r) = reference {
            trace.errors_inf.push(inf_dist(r, &q));
        }
        if config.record_trace {
            trace.iterates.push(q.clone());
        }
        if residual <= config.tolerance {
            trace.converged = true;
            break;
        }
        if trace.iterations >= config.max_iterations {
            break;
        }
        let step = match pev_steps {
            None => newton_direction(&lin)?,
            Some(m) => {
                let (sum, rest) = truncated_neumann(&lin, m)?;
                trace.inexact_residual_norms.push(inf_norm_vec(&rest));
                sum
            }
        };
        q = add(&q, &step);
        if config.record_trace {
            trace.steps.push(ValueVector::new(step));
        }
        trace.iterations += 1;
    }
    trace.final_q = q;
    Ok(trace)
}

/// High-accuracy solution of `F(q) = 0`: Newton from zero until
/// `‖F‖∞ ≤ 1e-13`, then two more Newton steps.
pub fn solve_reference(instance: &MdpInstance, reg: &RegularizerSpec) -> Result<ValueVector> {
    const MAX_STEPS: usize = 200;
    // Residual level accepted when round-off keeps the iteration from
    // reaching REFERENCE_TOLERANCE (large values at discounts near one).
    const STAGNATION_CEILING: f64 = 1e-10;

    let mut q = ValueVector::zeros(instance.pairs());
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for _ in 0..MAX_STEPS {
        let lin = Linearization::at(&q, instance, reg)?;
        let residual = inf_norm_vec(&lin.residual);
        if residual <= REFERENCE_TOLERANCE {
            break;
        }
        if residual < best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 3 && best <= STAGNATION_CEILING {
                break;
            }
        }
        q = add(&q, &newton_direction(&lin)?);
    }
    let residual = inf_norm_vec(&Linearization::at(&q, instance, reg)?.residual);
    if residual > STAGNATION_CEILING {
        return Err(Error::Internal(format!(
            "reference solve stalled at residual {residual:e}"
        )));
    }
    for _ in 0..2 {
        q = newton_step(&q, instance, reg)?;
    }
    Ok(q)
}

/// Result of evaluating a frozen policy by operator iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub values: ValueVector,
    pub sweeps: usize,
    pub converged: bool,
}

/// Applies `T^π` repeatedly from `start` until successive iterates differ by
/// at most `tolerance` in the ∞-norm.
pub fn evaluate_policy_by_iteration(
    policy: &PolicyMatrix,
    start: &[f64],
    instance: &MdpInstance,
    reg: &RegularizerSpec,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<PolicyEvaluation> {
    let mut q = ValueVector::new(start.to_vec());
    for sweep in 1..=max_sweeps {
        let next = apply_self_consistency(&q, policy, instance, reg)?;
        let change = inf_dist(&next, &q);
        q = next;
        if change <= tolerance {
            return Ok(PolicyEvaluation {
                values: q,
                sweeps: sweep,
                converged: true,
            });
        }
    }
    Ok(PolicyEvaluation {
        values: q,
        sweeps: max_sweeps,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bellman::{greedy_policy, residual_f};
    use crate::linalg::DenseMatrix;
    use crate::mdp::{random_instance, random_value_vector};

    fn scalar_instance() -> MdpInstance {
        MdpInstance::new(1, 1, 0.8, DenseMatrix::identity(1), vec![1.0]).unwrap()
    }

    fn shannon5() -> RegularizerSpec {
        RegularizerSpec::shannon(5.0).unwrap()
    }

    #[test]
    fn scalar_newton_step_is_exact() {
        let q = newton_step(&[0.0], &scalar_instance(), &shannon5()).unwrap();
        assert!((q[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_inexact_residual() {
        let r = mpi_residual(&[0.0], 1, &scalar_instance(), &shannon5()).unwrap();
        assert!((r[0] - 0.8).abs() < 1e-15);
        let b = pev_closed_form(&[0.0], 1, &scalar_instance(), &shannon5()).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_pi_run() {
        let cfg = SolverConfig::policy_iteration().with_tolerance(1e-12);
        let trace = run(&scalar_instance(), &shannon5(), &cfg, &[0.0], Some(&[5.0])).unwrap();
        assert!(trace.converged);
        assert!(trace.iterations <= 2);
        assert!((trace.final_q[0] - 5.0).abs() < 1e-12);
        assert_eq!(trace.residual_norms.len(), trace.iterations + 1);
        assert_eq!(trace.errors_inf.len(), trace.iterations + 1);
        assert!(trace.inexact_residual_norms.is_empty());
    }

    #[test]
    fn reference_scalar_and_residual() {
        let q = solve_reference(&scalar_instance(), &shannon5()).unwrap();
        assert!((q[0] - 5.0).abs() < 1e-12);
        for seed in 0..10 {
            let inst = random_instance(5, 5, 0.8, seed).unwrap();
            for reg in [shannon5(), RegularizerSpec::tsallis(5.0).unwrap()] {
                let q = solve_reference(&inst, &reg).unwrap();
                assert!(inf_norm_vec(&residual_f(&q, &inst, &reg).unwrap()) <= 1e-12);
            }
        }
    }

    #[test]
    fn reference_does_not_depend_on_start() {
        let inst = random_instance(4, 3, 0.8, 12).unwrap();
        let reg = shannon5();
        let a = solve_reference(&inst, &reg).unwrap();
        let cfg = SolverConfig::policy_iteration().with_tolerance(1e-13);
        let q0 = random_value_vector(4, 3, 0.8, 99);
        let b = run(&inst, &reg, &cfg, &q0, None).unwrap();
        assert!(b.converged);
        let b = newton_step(&b.final_q, &inst, &reg).unwrap();
        assert!(inf_dist(&a, &b) < 1e-11);
    }

    #[test]
    fn initial_step_has_nonnegative_residual() {
        for seed in 0..20 {
            let inst = random_instance(5, 5, 0.8, seed).unwrap();
            let q0 = random_value_vector(5, 5, 0.8, seed);
            for reg in [shannon5(), RegularizerSpec::tsallis(1.0).unwrap()] {
                let q1 = newton_step(&q0, &inst, &reg).unwrap();
                let f = residual_f(&q1, &inst, &reg).unwrap();
                assert!(f.iter().all(|&v| v >= -1e-10));
            }
        }
    }

    #[test]
    fn closed_form_matches_operator_iteration() {
        for seed in 0..5 {
            let inst = random_instance(5, 5, 0.8, seed).unwrap();
            let q = random_value_vector(5, 5, 0.8, seed + 100);
            for reg in [shannon5(), RegularizerSpec::tsallis(2.0).unwrap()] {
                let pi = greedy_policy(&q, &inst, &reg).unwrap();
                for m in [1usize, 2, 5, 50] {
                    let closed = pev_closed_form(&q, m, &inst, &reg).unwrap();
                    let mut it = q.clone();
                    for _ in 0..m {
                        it = apply_self_consistency(&it, &pi, &inst, &reg).unwrap();
                    }
                    assert!(inf_dist(&closed, &it) < 1e-10, "M={m}");
                }
            }
        }
    }

    #[test]
    fn long_truncation_approaches_newton() {
        let inst = random_instance(5, 5, 0.8, 3).unwrap();
        let q = random_value_vector(5, 5, 0.8, 3);
        let reg = shannon5();
        let long = pev_closed_form(&q, 10_000, &inst, &reg).unwrap();
        let exact = newton_step(&q, &inst, &reg).unwrap();
        assert!(inf_dist(&long, &exact) < 1e-9);
    }

    #[test]
    fn newton_matches_frozen_policy_fixed_point() {
        for seed in 0..5 {
            let inst = random_instance(5, 5, 0.8, seed).unwrap();
            let q = random_value_vector(5, 5, 0.8, seed);
            let reg = shannon5();
            let pi = greedy_policy(&q, &inst, &reg).unwrap();
            let eval = evaluate_policy_by_iteration(&pi, &q, &inst, &reg, 1e-14, 10_000).unwrap();
            assert!(eval.converged);
            let newton = newton_step(&q, &inst, &reg).unwrap();
            assert!(inf_dist(&newton, &eval.values) <= 1e-9);
        }
    }

    #[test]
    fn inexact_residual_bound_and_identity() {
        let inst = random_instance(4, 4, 0.9, 8).unwrap();
        let q = random_value_vector(4, 4, 0.9, 8);
        let reg = shannon5();
        let lin = Linearization::at(&q, &inst, &reg).unwrap();
        let fnorm = inf_norm_vec(&lin.residual);
        for m in [1usize, 2, 5, 50] {
            let r = mpi_residual(&q, m, &inst, &reg).unwrap();
            assert!(inf_norm_vec(&r) <= inst.gamma.powi(m as i32) * fnorm + 1e-12);
            let next = pev_closed_form(&q, m, &inst, &reg).unwrap();
            let s: Vec<f64> = next.iter().zip(q.iter()).map(|(a, b)| a - b).collect();
            let js = lin.jacobian().matvec(&s).unwrap();
            let dev = (0..16)
                .map(|i| (js[i] + lin.residual[i] - r[i]).abs())
                .fold(0.0, f64::max);
            assert!(dev < 1e-10);
        }
    }

    #[test]
    fn pi_trace_is_monotone() {
        for seed in 0..10 {
            let inst = random_instance(5, 5, 0.8, seed).unwrap();
            let reg = shannon5();
            let q0 = random_value_vector(5, 5, 0.8, seed);
            let trace = run(&inst, &reg, &SolverConfig::policy_iteration(), &q0, None).unwrap();
            assert!(trace.converged);
            for k in 1..trace.iterates.len() - 1 {
                let (a, b) = (&trace.iterates[k], &trace.iterates[k + 1]);
                assert!(a.iter().zip(b.iter()).all(|(x, y)| *x <= y + 1e-12));
            }
        }
    }

    #[test]
    fn mpi_converges_fast_at_large_m() {
        let inst = random_instance(5, 5, 0.8, 42).unwrap();
        let reg = shannon5();
        let q0 = random_value_vector(5, 5, 0.8, 42);
        let cfg = SolverConfig::modified_policy_iteration(50).with_max_iterations(10);
        let trace = run(&inst, &reg, &cfg, &q0, None).unwrap();
        assert!(trace.converged);
        assert!(trace.final_residual() <= 1e-10);
        assert_eq!(trace.inexact_residual_norms.len(), trace.iterations);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let inst = random_instance(5, 5, 0.8, 1).unwrap();
        let cfg = SolverConfig::value_iteration()
            .with_max_iterations(3)
            .with_record_trace(false);
        let trace = run(&inst, &shannon5(), &cfg, &[0.0; 25], None).unwrap();
        assert!(!trace.converged);
        assert_eq!(trace.iterations, 3);
        assert!(trace.iterates.is_empty() && trace.steps.is_empty());
        assert_eq!(trace.residual_norms.len(), 4);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::modified_policy_iteration(0)
            .validate()
            .is_err());
        assert!(SolverConfig::policy_iteration()
            .with_tolerance(0.0)
            .validate()
            .is_err());
        assert!(pev_closed_form(&[0.0], 0, &scalar_instance(), &shannon5()).is_err());
        assert_eq!(
            "MPI".parse::<Algorithm>().unwrap(),
            Algorithm::ModifiedPolicyIteration
        );
        assert!("newton".parse::<Algorithm>().is_err());
        assert_eq!(
            SolverConfig::value_iteration().effective_pev_steps(),
            Some(1)
        );
    }
}
