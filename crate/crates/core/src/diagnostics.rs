//! Measured versions of the convergence bounds.
//!
//! Constants (`n·m` pairs, modulus `μ`, smoothing `N`, discount `γ`):
//!
//! ```text
//! A      = (3/2) (γ/(1−γ)) (N/μ) √(nm)         quadratic coefficient
//! radius = 1/A                                  quadratic region
//! η      = γᴹ
//! δ      = (1−γ) (√(1 + Δ/(η+2)) − 1)
//! ε      = (1−γ)³ / ((1+γ) γ) · μ/(N√(nm)) · δ
//! ‖v‖_*  = ‖F'(q_*) v‖∞
//! ```
//!
//! Error ratios are only formed where the denominator exceeds
//! [`NOISE_FLOOR`].

use std::fmt;

use crate::bellman::{apply_bellman, apply_self_consistency, residual_f, Linearization};
use crate::error::{Error, Result};
use crate::linalg::{inf_dist, inf_norm_vec, inverse, two_norm_vec, DenseMatrix};
use crate::mdp::{random_value_vector, MdpInstance};
use crate::regularizer::{regularizer_value, RegularizerKind, RegularizerSpec};
use crate::rng::SplitMix64;
use crate::solvers::{
    mpi_residual, pev_closed_form, run, solve_reference, SolverConfig, SolverTrace,
};

/// Errors at or below this level are treated as round-off.
pub const NOISE_FLOOR: f64 = 1e-13;

/// Number of trailing ratios averaged into the asymptotic rate estimate.
pub const RATE_WINDOW: usize = 3;

/// Default central-difference step for Jacobian checks.
pub const FD_STEP: f64 = 1e-6;

/// Reusable evaluator for `‖F'(q_*) v‖∞`.
#[derive(Debug, Clone)]
pub struct StarNorm<'a> {
    lin: Linearization<'a>,
}

impl<'a> StarNorm<'a> {
    pub fn new(q_star: &[f64], instance: &'a MdpInstance, reg: &RegularizerSpec) -> Result<Self> {
        Ok(Self {
            lin: Linearization::at(q_star, instance, reg)?,
        })
    }

    pub fn eval(&self, v: &[f64]) -> Result<f64> {
        let jv = self.lin.propagate(v)?;
        Ok(jv
            .iter()
            .zip(v)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }
}

pub fn star_norm(
    v: &[f64],
    q_star: &[f64],
    instance: &MdpInstance,
    reg: &RegularizerSpec,
) -> Result<f64> {
    StarNorm::new(q_star, instance, reg)?.eval(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticConstants {
    /// `A`.
    pub coefficient: f64,
    /// `1/A`.
    pub radius: f64,
}

pub fn quadratic_constants(instance: &MdpInstance, reg: &RegularizerSpec) -> QuadraticConstants {
    let g = instance.gamma;
    let root = (instance.pairs() as f64).sqrt();
    let coefficient = 1.5 * (g / (1.0 - g)) * reg.gradient_lipschitz() * root;
    let radius = (2.0 / 3.0)
        * ((1.0 - g) / g)
        * (reg.strong_convexity() / (reg.smoothing_strength() * root));
    QuadraticConstants {
        coefficient,
        radius,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpiRegionConstants {
    /// `η = γᴹ`.
    pub eta: f64,
    /// `Δ`, the allowed excess over `η`.
    pub delta_cap: f64,
    pub delta: f64,
    pub epsilon: f64,
}

/// `(γ − γᴹ) / 10`.
pub fn default_delta_cap(gamma: f64, pev_steps: usize) -> f64 {
    (gamma - gamma.powi(pev_steps as i32)) / 10.0
}

/// `δ(Δ, η, γ)`.
pub fn region_delta(delta_cap: f64, eta: f64, gamma: f64) -> f64 {
    (1.0 - gamma) * ((1.0 + delta_cap / (eta + 2.0)).sqrt() - 1.0)
}

/// Left-hand side `(1 + δ/(1−γ)) (η + (η+2) δ/(1−γ))`, which stays below
/// `η + Δ` for `δ = region_delta(Δ, η, γ)`.
pub fn scaling_lhs(eta: f64, delta: f64, gamma: f64) -> f64 {
    let t = delta / (1.0 - gamma);
    (1.0 + t) * (eta + (eta + 2.0) * t)
}

pub fn mpi_region_constants(
    instance: &MdpInstance,
    reg: &RegularizerSpec,
    pev_steps: usize,
    delta_cap: f64,
) -> Result<MpiRegionConstants> {
    if pev_steps == 0 {
        return Err(Error::Argument(
            "evaluation steps M must be at least 1".into(),
        ));
    }
    let g = instance.gamma;
    let eta = g.powi(pev_steps as i32);
    if !(delta_cap > 0.0 && delta_cap < g - eta) {
        return Err(Error::Argument(format!(
            "Δ = {delta_cap} must lie in (0, γ − γ^M) = (0, {})",
            g - eta
        )));
    }
    let delta = region_delta(delta_cap, eta, g);
    let root = (instance.pairs() as f64).sqrt();
    let epsilon = (1.0 - g).powi(3) / ((1.0 + g) * g)
        * (reg.strong_convexity() / (reg.smoothing_strength() * root))
        * delta;
    Ok(MpiRegionConstants {
        eta,
        delta_cap,
        delta,
        epsilon,
    })
}

/// One ratio `e_{k+1} / e_k` (or `e_{k+1} / e_k²`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioPoint {
    pub k: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateAnalysis {
    pub errors_inf: Vec<f64>,
    pub errors_star: Vec<f64>,
    pub per_step_ratios_inf: Vec<RatioPoint>,
    pub per_step_ratios_star: Vec<RatioPoint>,
    pub quadratic_ratios: Vec<RatioPoint>,
    /// Geometric mean of the last up to [`RATE_WINDOW`] ∞-norm ratios.
    pub asymptotic_rate_estimate: f64,
    /// Same in the star norm.
    pub asymptotic_rate_estimate_star: f64,
    pub quadratic_coefficient_a: f64,
    pub quadratic_region_radius: f64,
    /// `γᴹ`; zero for exact policy evaluation.
    pub gamma_m: f64,
    /// `Δ`, `δ`, `ε` at the default `Δ`; absent when `γ − γᴹ = 0` (VI).
    pub region: Option<MpiRegionConstants>,
}

fn ratios(errors: &[f64], power: i32) -> Vec<RatioPoint> {
    errors
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] > NOISE_FLOOR)
        .map(|(k, w)| RatioPoint {
            k,
            ratio: w[1] / w[0].powi(power),
        })
        .collect()
}

fn tail_geometric_mean(points: &[RatioPoint]) -> f64 {
    let tail = &points[points.len().saturating_sub(RATE_WINDOW)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    let log_sum: f64 = tail
        .iter()
        .map(|p| p.ratio.max(f64::MIN_POSITIVE).ln())
        .sum();
    (log_sum / tail.len() as f64).exp()
}

/// Error-sequence analysis of a recorded trace against `q_star`.
pub fn analyze_rates(
    trace: &SolverTrace,
    q_star: &[f64],
    instance: &MdpInstance,
    reg: &RegularizerSpec,
) -> Result<RateAnalysis> {
    if trace.iterates.is_empty() {
        return Err(Error::InsufficientData(
            "trace has no recorded iterates (record_trace was off)".into(),
        ));
    }
    let star = StarNorm::new(q_star, instance, reg)?;
    let mut errors_inf = Vec::with_capacity(trace.iterates.len());
    let mut errors_star = Vec::with_capacity(trace.iterates.len());
    for q in &trace.iterates {
        let diff: Vec<f64> = q.iter().zip(q_star).map(|(a, b)| a - b).collect();
        errors_inf.push(inf_norm_vec(&diff));
        errors_star.push(star.eval(&diff)?);
    }
    let usable = errors_inf.iter().filter(|&&e| e > NOISE_FLOOR).count();
    if usable < 3 {
        return Err(Error::InsufficientData(format!(
            "{usable} iterate(s) above the noise floor, need at least 3"
        )));
    }
    let per_step_ratios_inf = ratios(&errors_inf, 1);
    let per_step_ratios_star = ratios(&errors_star, 1);
    let quadratic_ratios = ratios(&errors_inf, 2);
    let consts = quadratic_constants(instance, reg);
    let gamma = instance.gamma;
    let (gamma_m, region) = match trace.pev_steps {
        None => {
            let cap = gamma / 10.0;
            let delta = region_delta(cap, 0.0, gamma);
            let root = (instance.pairs() as f64).sqrt();
            let epsilon = (1.0 - gamma).powi(3) / ((1.0 + gamma) * gamma)
                * (reg.strong_convexity() / (reg.smoothing_strength() * root))
                * delta;
            (
                0.0,
                Some(MpiRegionConstants {
                    eta: 0.0,
                    delta_cap: cap,
                    delta,
                    epsilon,
                }),
            )
        }
        Some(m) => {
            let cap = default_delta_cap(gamma, m);
            let region = if cap > 0.0 {
                Some(mpi_region_constants(instance, reg, m, cap)?)
            } else {
                None
            };
            (gamma.powi(m as i32), region)
        }
    };
    Ok(RateAnalysis {
        asymptotic_rate_estimate: tail_geometric_mean(&per_step_ratios_inf),
        asymptotic_rate_estimate_star: tail_geometric_mean(&per_step_ratios_star),
        errors_inf,
        errors_star,
        per_step_ratios_inf,
        per_step_ratios_star,
        quadratic_ratios,
        quadratic_coefficient_a: consts.coefficient,
        quadratic_region_radius: consts.radius,
        gamma_m,
        region,
    })
}

/// Central-difference approximation of `F'(q)` with step `step`.
pub fn finite_difference_jacobian(
    q: &[f64],
    instance: &MdpInstance,
    reg: &RegularizerSpec,
    step: f64,
) -> Result<DenseMatrix> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Argument(format!(
            "step must be positive, got {step}"
        )));
    }
    let d = q.len();
    instance.check_values("value vector", q)?;
    let mut out = DenseMatrix::zeros(d, d);
    let mut probe = q.to_vec();
    for j in 0..d {
        probe[j] = q[j] + step;
        let fp = residual_f(&probe, instance, reg)?;
        probe[j] = q[j] - step;
        let fm = residual_f(&probe, instance, reg)?;
        probe[j] = q[j];
        for i in 0..d {
            out.set(i, j, (fp[i] - fm[i]) / (2.0 * step));
        }
    }
    Ok(out)
}

/// Largest entrywise gap between the analytic Jacobian and central
/// differences of `F`.
pub fn jacobian_fd_check(
    q: &[f64],
    instance: &MdpInstance,
    reg: &RegularizerSpec,
    step: f64,
) -> Result<f64> {
    let analytic = Linearization::at(q, instance, reg)?.jacobian();
    let fd = finite_difference_jacobian(q, instance, reg, step)?;
    Ok(analytic.sub(&fd)?.max_abs())
}

/// Deliberate defects for exercising the invariant suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Analytic Jacobian built as `P∇f − I`, dropping the discount.
    JacobianWithoutDiscount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub samples: usize,
    /// Smallest `bound − measured` seen; negative means violated.
    pub worst_slack: f64,
    pub passed: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvariantReport {
    pub checks: Vec<CheckResult>,
}

impl InvariantReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(
                f,
                "{} {:<42} samples={:<5} worst_slack={:+.3e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.samples,
                c.worst_slack
            )?;
            if let Some(note) = &c.note {
                write!(f, "  ({note})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Tracks the worst slack of one sampled inequality.
struct Check {
    name: &'static str,
    samples: usize,
    worst: f64,
    note: Option<String>,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            samples: 0,
            worst: f64::INFINITY,
            note: None,
        }
    }

    /// Records `bound − measured`.
    fn slack(&mut self, bound: f64, measured: f64) {
        self.samples += 1;
        let s = bound - measured;
        self.worst = if s.is_nan() {
            f64::NEG_INFINITY
        } else {
            self.worst.min(s)
        };
    }

    fn run(mut self, body: impl FnOnce(&mut Self) -> Result<()>) -> CheckResult {
        if let Err(e) = body(&mut self) {
            self.worst = f64::NEG_INFINITY;
            self.note = Some(e.to_string());
        }
        CheckResult {
            name: self.name,
            samples: self.samples,
            worst_slack: self.worst,
            passed: self.worst >= 0.0,
            note: self.note,
        }
    }
}

pub fn invariant_suite(
    instance: &MdpInstance,
    reg: &RegularizerSpec,
    seed: u64,
    samples: usize,
) -> InvariantReport {
    invariant_suite_with_fault(instance, reg, seed, samples, None)
}

/// [`invariant_suite`] with an optional injected defect.
pub fn invariant_suite_with_fault(
    instance: &MdpInstance,
    reg: &RegularizerSpec,
    seed: u64,
    samples: usize,
    fault: Option<Fault>,
) -> InvariantReport {
    let mut rng = SplitMix64::new(seed);
    let (m, gamma) = (instance.m, instance.gamma);
    let d = instance.pairs();
    let scale = 1.0 / (1.0 - gamma);
    let nsmooth = reg.smoothing_strength();
    let lipschitz = reg.gradient_lipschitz();

    let draw_q = move |rng: &mut SplitMix64| -> Vec<f64> {
        (0..d)
            .map(|_| rng.uniform(-2.0 * scale, 2.0 * scale))
            .collect()
    };
    let draw_x =
        |rng: &mut SplitMix64| -> Vec<f64> { (0..m).map(|_| rng.uniform(-3.0, 3.0)).collect() };
    let jacobian_of = |lin: &Linearization<'_>| -> DenseMatrix {
        match fault {
            None => lin.jacobian(),
            Some(Fault::JacobianWithoutDiscount) => {
                let mut j = lin.propagator_matrix().scale(1.0 / gamma);
                for i in 0..d {
                    j.set(i, i, j.get(i, i) - 1.0);
                }
                j
            }
        }
    };

    let mut checks = Vec::new();

    checks.push(Check::new("smoothed_max.envelope").run(|c| {
        for _ in 0..samples {
            let x = draw_x(&mut rng);
            let out = reg.evaluate(&x)?;
            let inner: f64 = out.gradient.iter().zip(&x).map(|(p, v)| p * v).sum();
            let rebuilt = inner - regularizer_value(&out.gradient, reg)? / nsmooth;
            c.slack(1e-10, (out.value - rebuilt).abs());
        }
        Ok(())
    }));

    checks.push(Check::new("smoothed_max.gradient_fd").run(|c| {
        let h = 1e-6;
        let mut attempts = 0;
        while c.samples < samples && attempts < 20 * samples.max(1) {
            attempts += 1;
            let x = draw_x(&mut rng);
            let g = reg.evaluate(&x)?.gradient;
            if reg.kind() == RegularizerKind::Tsallis {
                // the gradient is piecewise linear; skip points whose support
                // could change under the perturbation
                let i = g.iter().position(|&p| p > 0.0).unwrap_or(0);
                let tau = nsmooth * x[i] - g[i];
                let margin = x
                    .iter()
                    .map(|v| (nsmooth * v - tau).abs())
                    .fold(f64::INFINITY, f64::min);
                if margin < 1e-4 {
                    continue;
                }
            }
            let mut worst: f64 = 0.0;
            let mut probe = x.clone();
            for j in 0..m {
                probe[j] = x[j] + h;
                let up = reg.evaluate(&probe)?.value;
                probe[j] = x[j] - h;
                let down = reg.evaluate(&probe)?.value;
                probe[j] = x[j];
                worst = worst.max(((up - down) / (2.0 * h) - g[j]).abs());
            }
            c.slack(1e-6, worst);
        }
        Ok(())
    }));

    checks.push(Check::new("smoothed_max.gradient_lipschitz").run(|c| {
        for _ in 0..samples {
            let x = draw_x(&mut rng);
            let y = draw_x(&mut rng);
            let gx = reg.evaluate(&x)?.gradient;
            let gy = reg.evaluate(&y)?.gradient;
            let dg: Vec<f64> = gx.iter().zip(gy.iter()).map(|(a, b)| a - b).collect();
            let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            c.slack(lipschitz * two_norm_vec(&dx) + 1e-10, two_norm_vec(&dg));
        }
        Ok(())
    }));

    checks.push(Check::new("smoothed_max.uniform_approximation").run(|c| {
        let gap = reg.max_gap(m);
        for _ in 0..samples {
            let x = draw_x(&mut rng);
            let hard = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let soft = reg.evaluate(&x)?.value;
            c.slack(soft + 1e-12, hard);
            c.slack(hard + gap + 1e-12, soft);
        }
        Ok(())
    }));

    checks.push(Check::new("smoothed_max.convexity").run(|c| {
        for _ in 0..samples {
            let x = draw_x(&mut rng);
            let y = draw_x(&mut rng);
            let lambda = rng.next_f64();
            let mix: Vec<f64> = x
                .iter()
                .zip(&y)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let lhs = reg.evaluate(&mix)?.value;
            let rhs = lambda * reg.evaluate(&x)?.value + (1.0 - lambda) * reg.evaluate(&y)?.value;
            c.slack(rhs + 1e-10, lhs);
        }
        Ok(())
    }));

    checks.push(
        Check::new("smoothed_max.gradient_is_distribution").run(|c| {
            for _ in 0..samples {
                let g = reg.evaluate(&draw_x(&mut rng))?.gradient;
                let min = g.iter().copied().fold(f64::INFINITY, f64::min);
                c.slack(min, 0.0);
                c.slack(1e-12, (g.iter().sum::<f64>() - 1.0).abs());
            }
            Ok(())
        }),
    );

    checks.push(Check::new("bellman.first_order_convexity").run(|c| {
        for _ in 0..samples {
            let q1 = draw_q(&mut rng);
            let q2 = draw_q(&mut rng);
            let lin = Linearization::at(&q1, instance, reg)?;
            let f2 = residual_f(&q2, instance, reg)?;
            let dq: Vec<f64> = q2.iter().zip(&q1).map(|(a, b)| a - b).collect();
            let jd = jacobian_of(&lin).matvec(&dq)?;
            let worst = (0..d)
                .map(|i| (f2[i] - lin.residual[i]) - jd[i])
                .fold(f64::INFINITY, f64::min);
            c.slack(worst + 1e-10, 0.0);
        }
        Ok(())
    }));

    checks.push(Check::new("bellman.jacobian_lipschitz").run(|c| {
        let constant = gamma * lipschitz * (d as f64).sqrt();
        for _ in 0..samples {
            let q1 = draw_q(&mut rng);
            // nearby pairs exercise the bound where it is tightest
            let radius = scale * 10f64.powf(-3.0 * rng.next_f64());
            let q2: Vec<f64> = q1
                .iter()
                .map(|v| v + rng.uniform(-radius, radius))
                .collect();
            let j1 = jacobian_of(&Linearization::at(&q1, instance, reg)?);
            let j2 = jacobian_of(&Linearization::at(&q2, instance, reg)?);
            c.slack(
                constant * inf_dist(&q1, &q2) + 1e-10,
                j1.sub(&j2)?.inf_norm(),
            );
        }
        Ok(())
    }));

    let mut inverses = Vec::with_capacity(samples);
    checks.push(Check::new("bellman.jacobian_inverse_norm").run(|c| {
        for _ in 0..samples {
            let q = draw_q(&mut rng);
            let inv = inverse(&jacobian_of(&Linearization::at(&q, instance, reg)?))?;
            c.slack(scale + 1e-9, inv.inf_norm());
            inverses.push(inv);
        }
        Ok(())
    }));

    checks.push(Check::new("bellman.jacobian_inverse_negative").run(|c| {
        if inverses.is_empty() && samples > 0 {
            return Err(Error::Internal("no inverses available".into()));
        }
        for inv in &inverses {
            let worst = inv
                .add(&DenseMatrix::identity(d))?
                .as_slice()
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            c.slack(1e-10, worst);
        }
        Ok(())
    }));

    checks.push(Check::new("bellman.jacobian_inf_norm").run(|c| {
        for _ in 0..samples {
            let q = draw_q(&mut rng);
            let j = jacobian_of(&Linearization::at(&q, instance, reg)?);
            c.slack(1.0 + gamma + 1e-12, j.inf_norm());
        }
        Ok(())
    }));

    checks.push(Check::new("bellman.jacobian_fd").run(|c| {
        for _ in 0..samples {
            let q = draw_q(&mut rng);
            let analytic = jacobian_of(&Linearization::at(&q, instance, reg)?);
            let fd = finite_difference_jacobian(&q, instance, reg, FD_STEP)?;
            c.slack(1e-6, analytic.sub(&fd)?.max_abs());
        }
        Ok(())
    }));

    checks.push(Check::new("bellman.decomposition").run(|c| {
        for _ in 0..samples {
            let q = draw_q(&mut rng);
            let lin = Linearization::at(&q, instance, reg)?;
            let jq = jacobian_of(&lin).matvec(&q)?;
            let mut worst: f64 = 0.0;
            for (i, probs) in instance.transition.iter_rows().enumerate() {
                let pe: f64 = probs.iter().zip(&lin.e_omega).map(|(p, e)| p * e).sum();
                let rebuilt = jq[i] + gamma * pe + instance.reward[i];
                worst = worst.max((rebuilt - lin.residual[i]).abs());
            }
            c.slack(1e-10, worst);
        }
        Ok(())
    }));

    checks.push(Check::new("bellman.e_omega_range").run(|c| {
        let upper = reg.max_gap(m);
        for _ in 0..samples {
            let lin = Linearization::at(&draw_q(&mut rng), instance, reg)?;
            for &e in &lin.e_omega {
                c.slack(e + 1e-15, 0.0);
                c.slack(upper + 1e-15, e);
            }
        }
        Ok(())
    }));

    checks.push(Check::new("bellman.contraction").run(|c| {
        for _ in 0..samples {
            let q1 = draw_q(&mut rng);
            let q2 = draw_q(&mut rng);
            let b1 = apply_bellman(&q1, instance, reg)?;
            let b2 = apply_bellman(&q2, instance, reg)?;
            c.slack(gamma * inf_dist(&q1, &q2) + 1e-12, inf_dist(&b1, &b2));
        }
        Ok(())
    }));

    checks.push(Check::new("bellman.greedy_consistency").run(|c| {
        for _ in 0..samples {
            let q = draw_q(&mut rng);
            let lin = Linearization::at(&q, instance, reg)?;
            let b = apply_bellman(&q, instance, reg)?;
            let t = apply_self_consistency(&q, &lin.policy, instance, reg)?;
            c.slack(1e-10, inf_dist(&b, &t));
        }
        Ok(())
    }));

    checks.push(Check::new("diagnostics.star_norm_sandwich").run(|c| {
        let q_center = draw_q(&mut rng);
        let star = StarNorm::new(&q_center, instance, reg)?;
        for _ in 0..samples {
            let v = draw_q(&mut rng);
            let vi = inf_norm_vec(&v);
            let sv = star.eval(&v)?;
            c.slack(sv + 1e-12, (1.0 - gamma) * vi);
            c.slack((1.0 + gamma) * vi + 1e-12, sv);
        }
        Ok(())
    }));

    checks.push(Check::new("diagnostics.quadratic_constants").run(|c| {
        let consts = quadratic_constants(instance, reg);
        c.slack(1e-12, (consts.coefficient * consts.radius - 1.0).abs());
        Ok(())
    }));

    checks.push(Check::new("diagnostics.region_delta").run(|c| {
        for _ in 0..samples {
            let eta = gamma.powi(1 + (rng.next_u64() % 60) as i32);
            let cap_max = gamma - eta;
            if cap_max <= 0.0 {
                continue;
            }
            let a = cap_max * rng.next_f64().max(1e-6);
            let b = a + (cap_max - a) * rng.next_f64().max(1e-6);
            let (da, db) = (region_delta(a, eta, gamma), region_delta(b, eta, gamma));
            if b > a {
                c.slack(db - da, 0.0);
            }
            c.slack(eta + a, scaling_lhs(eta, da, gamma));
        }
        Ok(())
    }));

    InvariantReport { checks }
}

/// Solver-level properties on one instance: global linear rate,
/// monotonicity and total bound of exact policy iteration from a seeded
/// start, and the inexact Newton identity of `pev_steps`-step evaluation.
pub fn solver_property_checks(
    instance: &MdpInstance,
    reg: &RegularizerSpec,
    seed: u64,
    pev_steps: usize,
) -> Vec<CheckResult> {
    let gamma = instance.gamma;
    let q0 = random_value_vector(instance.n, instance.m, gamma, seed);
    let pi = solve_reference(instance, reg).and_then(|q_star| {
        let cfg = SolverConfig::policy_iteration().with_tolerance(1e-12);
        let trace = run(instance, reg, &cfg, &q0, Some(&q_star))?;
        if !trace.converged {
            return Err(Error::Internal("policy iteration did not converge".into()));
        }
        Ok(trace)
    });
    let mut checks = Vec::new();

    checks.push(Check::new("solver.pi_linear_rate").run(|c| {
        let trace = pi.as_ref().map_err(|e| Error::Internal(e.to_string()))?;
        let e = &trace.errors_inf;
        for k in 1..e.len().saturating_sub(1) {
            if e[k] < 1e-10 {
                break;
            }
            c.slack(gamma * e[k] + 1e-12, e[k + 1]);
        }
        Ok(())
    }));

    checks.push(Check::new("solver.pi_total_bound").run(|c| {
        let trace = pi.as_ref().map_err(|e| Error::Internal(e.to_string()))?;
        let e = &trace.errors_inf;
        let start = e[0].min(trace.residual_norms[0]);
        for (k, &ek) in e.iter().enumerate() {
            c.slack(
                2.0 * gamma.powi(k as i32) / (1.0 - gamma) * start + 1e-9,
                ek,
            );
        }
        Ok(())
    }));

    checks.push(Check::new("solver.pi_monotone").run(|c| {
        let trace = pi.as_ref().map_err(|e| Error::Internal(e.to_string()))?;
        for w in trace.iterates.windows(2).skip(1) {
            let worst = w[0]
                .iter()
                .zip(w[1].iter())
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
            c.slack(1e-12, worst);
        }
        for q in trace.iterates.iter().skip(1) {
            let f = residual_f(q, instance, reg)?;
            c.slack(f.iter().copied().fold(f64::INFINITY, f64::min) + 1e-10, 0.0);
        }
        Ok(())
    }));

    checks.push(Check::new("solver.mpi_inexact_newton").run(|c| {
        let lin = Linearization::at(&q0, instance, reg)?;
        let step: Vec<f64> = pev_closed_form(&q0, pev_steps, instance, reg)?
            .iter()
            .zip(q0.iter())
            .map(|(a, b)| a - b)
            .collect();
        let r = mpi_residual(&q0, pev_steps, instance, reg)?;
        let js = lin.jacobian().matvec(&step)?;
        let worst = (0..js.len())
            .map(|i| (js[i] + lin.residual[i] - r[i]).abs())
            .fold(0.0, f64::max);
        c.slack(1e-10, worst);
        c.slack(
            gamma.powi(pev_steps as i32) * inf_norm_vec(&lin.residual) + 1e-12,
            inf_norm_vec(&r),
        );
        Ok(())
    }));

    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_instance;

    fn scalar_instance() -> MdpInstance {
        MdpInstance::new(1, 1, 0.8, DenseMatrix::identity(1), vec![1.0]).unwrap()
    }

    fn default_instance(seed: u64) -> (MdpInstance, RegularizerSpec) {
        (
            random_instance(5, 5, 0.8, seed).unwrap(),
            RegularizerSpec::shannon(5.0).unwrap(),
        )
    }

    #[test]
    fn star_norm_scalar_and_zero() {
        let inst = scalar_instance();
        let reg = RegularizerSpec::shannon(5.0).unwrap();
        assert_eq!(star_norm(&[0.0], &[5.0], &inst, &reg).unwrap(), 0.0);
        for v in [-3.0, 0.5, 10.0] {
            let s = star_norm(&[v], &[5.0], &inst, &reg).unwrap();
            assert!((s - 0.2 * f64::abs(v)).abs() < 1e-14);
        }
    }

    #[test]
    fn quadratic_constants_values() {
        let (inst, reg) = default_instance(0);
        let c = quadratic_constants(&inst, &reg);
        assert!((c.coefficient - 150.0).abs() < 1e-12);
        assert!((c.radius - 1.0 / 150.0).abs() < 1e-15);

        let inst = MdpInstance::new(1, 1, 0.5, DenseMatrix::identity(1), vec![0.0]).unwrap();
        let c = quadratic_constants(&inst, &RegularizerSpec::shannon(1.0).unwrap());
        assert!((c.coefficient - 1.5).abs() < 1e-15);
        assert!((c.radius - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.coefficient * c.radius - 1.0).abs() < 1e-15);
    }

    #[test]
    fn region_constants() {
        let (inst, reg) = default_instance(0);
        let rc = mpi_region_constants(&inst, &reg, 50, default_delta_cap(0.8, 50)).unwrap();
        assert!((rc.eta - 1.43e-5).abs() < 0.005e-5);
        assert!(scaling_lhs(rc.eta, rc.delta, 0.8) < rc.eta + rc.delta_cap);

        let tiny = mpi_region_constants(&inst, &reg, 50, 1e-14).unwrap();
        assert!(tiny.delta < 1e-14 && tiny.epsilon < 1e-16 && tiny.delta > 0.0);

        assert!(mpi_region_constants(&inst, &reg, 50, 0.0).is_err());
        assert!(mpi_region_constants(&inst, &reg, 50, 0.8).is_err());
        assert!(mpi_region_constants(&inst, &reg, 1, 0.01).is_err());
    }

    #[test]
    fn delta_increases_with_cap() {
        let mut prev = 0.0;
        for i in 1..100 {
            let d = region_delta(i as f64 * 1e-3, 0.3, 0.9);
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn fd_check_cases() {
        let reg = RegularizerSpec::shannon(5.0).unwrap();
        assert!(jacobian_fd_check(&[2.0], &scalar_instance(), &reg, 1e-6).unwrap() <= 1e-10);

        let (inst, reg) = default_instance(4);
        let q = random_value_vector(5, 5, 0.8, 4);
        let fine = jacobian_fd_check(&q, &inst, &reg, 1e-6).unwrap();
        let coarse = jacobian_fd_check(&q, &inst, &reg, 1e-2).unwrap();
        assert!(fine <= 1e-6);
        assert!(coarse > fine);
        assert!(jacobian_fd_check(&q, &inst, &reg, 0.0).is_err());
    }

    #[test]
    fn pi_rate_analysis() {
        let (inst, reg) = default_instance(42);
        let q_star = solve_reference(&inst, &reg).unwrap();
        let q0 = random_value_vector(5, 5, 0.8, 42);
        let cfg = SolverConfig::policy_iteration().with_tolerance(1e-13);
        let trace = run(&inst, &reg, &cfg, &q0, Some(&q_star)).unwrap();
        let ra = analyze_rates(&trace, &q_star, &inst, &reg).unwrap();
        for p in ra.per_step_ratios_inf.iter().filter(|p| p.k >= 1) {
            assert!(p.ratio <= 0.8 + 1e-9, "{p:?}");
        }
        for p in &ra.quadratic_ratios {
            if ra.errors_inf[p.k] <= ra.quadratic_region_radius
                && ra.errors_inf[p.k + 1] >= NOISE_FLOOR
            {
                assert!(p.ratio <= ra.quadratic_coefficient_a, "{p:?}");
            }
        }
        assert_eq!(ra.gamma_m, 0.0);
        // no ratio is formed from a sub-floor denominator
        for p in &ra.per_step_ratios_inf {
            assert!(ra.errors_inf[p.k] > NOISE_FLOOR);
        }
    }

    #[test]
    fn mpi_star_ratios_late() {
        let inst = random_instance(5, 5, 0.9, 7).unwrap();
        let reg = RegularizerSpec::shannon(5.0).unwrap();
        let q_star = solve_reference(&inst, &reg).unwrap();
        let q0 = random_value_vector(5, 5, 0.9, 7);
        let cfg = SolverConfig::modified_policy_iteration(3).with_tolerance(1e-12);
        let trace = run(&inst, &reg, &cfg, &q0, Some(&q_star)).unwrap();
        let ra = analyze_rates(&trace, &q_star, &inst, &reg).unwrap();
        let region = ra.region.unwrap();
        let tail = &ra.per_step_ratios_star[ra.per_step_ratios_star.len() - 3..];
        for p in tail {
            assert!(p.ratio <= 0.729 + region.delta_cap, "{p:?}");
        }
    }

    #[test]
    fn insufficient_data() {
        let reg = RegularizerSpec::shannon(5.0).unwrap();
        let inst = scalar_instance();
        let trace = run(&inst, &reg, &SolverConfig::policy_iteration(), &[0.0], None).unwrap();
        assert!(matches!(
            analyze_rates(&trace, &[5.0], &inst, &reg),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn suite_passes_on_default_instance() {
        let (inst, reg) = default_instance(42);
        let report = invariant_suite(&inst, &reg, 1, 100);
        assert!(report.all_passed(), "{report}");
        let mut names: Vec<_> = report.checks.iter().map(|c| c.name).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
    }

    #[test]
    fn suite_passes_for_tsallis_and_high_discount() {
        let inst = random_instance(4, 3, 0.99, 5).unwrap();
        let report = invariant_suite(&inst, &RegularizerSpec::shannon(5.0).unwrap(), 2, 50);
        assert!(report.all_passed(), "{report}");
        let report = invariant_suite(&inst, &RegularizerSpec::tsallis(3.0).unwrap(), 3, 50);
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn solver_checks_pass() {
        for seed in 0..5 {
            let (inst, reg) = default_instance(seed);
            for c in solver_property_checks(&inst, &reg, seed, 50) {
                assert!(c.passed, "{c:?}");
                assert!(c.samples > 0, "{c:?}");
            }
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let (inst, reg) = default_instance(42);
        let report =
            invariant_suite_with_fault(&inst, &reg, 1, 10, Some(Fault::JacobianWithoutDiscount));
        assert!(!report.all_passed());
        assert!(!report.get("bellman.jacobian_fd").unwrap().passed);
        assert!(report.get("smoothed_max.envelope").unwrap().passed);
    }
}
