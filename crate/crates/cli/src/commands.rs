use std::collections::BTreeMap;

use anyhow::{Context, Result};
use rayon::prelude::*;
use regpi_core::diagnostics::{
    analyze_rates, invariant_suite_with_fault, quadratic_constants, solver_property_checks,
    CheckResult, Fault, StarNorm,
};
use regpi_core::figures::{linear_figure, quadratic_figure};
use regpi_core::linalg::inf_norm_vec;
use regpi_core::mdp::{random_instance, random_value_vector};
use regpi_core::solvers::{run, solve_reference};
use regpi_core::{Algorithm, Error, MdpInstance, RegularizerSpec, SolverConfig, ValueVector};

use crate::output::{num, opt, Sink};
use crate::{
    FigureLinearArgs, FigureQuadraticArgs, GenerateArgs, InstanceArgs, RegularizerArgs, SolveArgs,
    StartArg, Status, VerifyArgs,
};

fn load_instance(args: &InstanceArgs) -> Result<MdpInstance> {
    match &args.instance {
        Some(path) => {
            MdpInstance::load(path).with_context(|| format!("reading {}", path.display()))
        }
        None => Ok(random_instance(args.n, args.m, args.gamma, args.seed)?),
    }
}

fn regularizer(args: &RegularizerArgs) -> Result<RegularizerSpec> {
    Ok(RegularizerSpec::new(
        args.regularizer.into(),
        args.smoothing,
    )?)
}

fn start(mode: StartArg, inst: &MdpInstance, seed: u64) -> ValueVector {
    match mode {
        StartArg::Zero => ValueVector::zeros(inst.pairs()),
        StartArg::Uniform => random_value_vector(inst.n, inst.m, inst.gamma, seed),
    }
}

pub fn generate(args: GenerateArgs) -> Result<Status> {
    let inst = load_instance(&args.instance)?;
    let report = inst.validate();
    match &args.out {
        Some(path) => {
            inst.save(path)?;
            println!(
                "wrote {} (n={}, m={}, gamma={}): {report}",
                path.display(),
                inst.n,
                inst.m,
                inst.gamma
            );
        }
        None => {
            println!("{}", inst.to_json_string());
            eprintln!("n={}, m={}, gamma={}: {report}", inst.n, inst.m, inst.gamma);
        }
    }
    Ok(Status::Success)
}

pub fn solve(args: SolveArgs) -> Result<Status> {
    let inst = load_instance(&args.instance)?;
    let reg = regularizer(&args.regularizer)?;
    let algorithm: Algorithm = args.algorithm.into();
    let config = SolverConfig {
        algorithm,
        pev_steps: args.pev_steps,
        tolerance: args.tol,
        max_iterations: args.max_iter,
        record_trace: true,
    };
    config.validate()?;
    let q0 = start(args.q0, &inst, args.instance.seed);
    let q_star = solve_reference(&inst, &reg)?;
    let trace = run(&inst, &reg, &config, &q0, Some(&q_star))?;
    let star = StarNorm::new(&q_star, &inst, &reg)?;

    let mut sink = Sink::open(
        args.out.as_deref(),
        &[
            "k",
            "residual_inf",
            "error_inf",
            "error_star",
            "step_inf",
            "inexact_residual_inf",
        ],
    )?;
    for (k, q) in trace.iterates.iter().enumerate() {
        let diff: Vec<f64> = q.iter().zip(q_star.iter()).map(|(a, b)| a - b).collect();
        sink.row([
            k.to_string(),
            num(trace.residual_norms[k]),
            num(trace.errors_inf[k]),
            num(star.eval(&diff)?),
            opt(trace.steps.get(k).map(|s| inf_norm_vec(s))),
            opt(trace.inexact_residual_norms.get(k).copied()),
        ])?;
    }

    let mut summary = vec![
        format!(
            "algorithm: {}{}",
            algorithm,
            trace
                .pev_steps
                .map(|m| format!(" (M = {m})"))
                .unwrap_or_default()
        ),
        format!("iterations: {}", trace.iterations),
        format!("converged: {}", trace.converged),
        format!("final residual: {}", num(trace.final_residual())),
        format!(
            "final error: {}",
            num(*trace.errors_inf.last().unwrap_or(&f64::NAN))
        ),
    ];
    match analyze_rates(&trace, &q_star, &inst, &reg) {
        Ok(ra) => {
            summary.push(format!(
                "rate estimate (inf): {}",
                num(ra.asymptotic_rate_estimate)
            ));
            summary.push(format!(
                "rate estimate (star): {}",
                num(ra.asymptotic_rate_estimate_star)
            ));
            summary.push(format!("gamma^M: {}", num(ra.gamma_m)));
            summary.push(format!(
                "quadratic coefficient A: {}",
                num(ra.quadratic_coefficient_a)
            ));
        }
        Err(Error::InsufficientData(reason)) => {
            summary.push(format!("rate estimate: n/a ({reason})"))
        }
        Err(e) => return Err(e.into()),
    }
    if !trace.converged {
        summary.push(format!(
            "flag: not converged within {} iterations",
            args.max_iter
        ));
    }
    sink.finish(&summary)?;
    Ok(if trace.converged {
        Status::Success
    } else {
        Status::NotConverged
    })
}

struct SeedResult {
    seed: u64,
    checks: Vec<CheckResult>,
}

pub fn verify(args: VerifyArgs) -> Result<Status> {
    let reg = regularizer(&args.regularizer)?;
    if args.pev_steps == 0 {
        return Err(Error::Argument("evaluation steps M must be at least 1".into()).into());
    }
    let fixed = match &args.instance.instance {
        Some(_) => Some(load_instance(&args.instance)?),
        None => {
            // surface bad dimensions or discounts as usage errors up front
            random_instance(
                args.instance.n,
                args.instance.m,
                args.instance.gamma,
                args.instance.seed,
            )?;
            None
        }
    };
    let fault = args.inject_fault.then_some(Fault::JacobianWithoutDiscount);
    let base = args.instance.seed;
    let results: Vec<SeedResult> = (base..base + args.seeds)
        .into_par_iter()
        .map(|seed| -> Result<SeedResult> {
            let inst = match &fixed {
                Some(inst) => inst.clone(),
                None => {
                    random_instance(args.instance.n, args.instance.m, args.instance.gamma, seed)?
                }
            };
            let mut checks =
                invariant_suite_with_fault(&inst, &reg, seed, args.samples, fault).checks;
            checks.extend(solver_property_checks(&inst, &reg, seed, args.pev_steps));
            Ok(SeedResult { seed, checks })
        })
        .collect::<Result<_>>()?;

    let mut sink = Sink::open(
        args.out.as_deref(),
        &["seed", "check", "samples", "worst_slack", "passed", "note"],
    )?;
    // per check: (worst slack, failing seeds)
    let mut totals: BTreeMap<&str, (f64, Vec<u64>)> = BTreeMap::new();
    for r in &results {
        for c in &r.checks {
            sink.row([
                r.seed.to_string(),
                c.name.to_string(),
                c.samples.to_string(),
                num(c.worst_slack),
                c.passed.to_string(),
                c.note.clone().unwrap_or_default(),
            ])?;
            let entry = totals.entry(c.name).or_insert((f64::INFINITY, Vec::new()));
            entry.0 = entry.0.min(c.worst_slack);
            if !c.passed {
                entry.1.push(r.seed);
            }
        }
    }

    let gamma = fixed.as_ref().map_or(args.instance.gamma, |i| i.gamma);
    let mut summary = vec![
        format!(
            "seeds: {} (from {base}), samples per check: {}",
            args.seeds, args.samples
        ),
        format!(
            "inverse-norm bound 1/(1-gamma): {}",
            num(1.0 / (1.0 - gamma))
        ),
    ];
    let mut failed = Vec::new();
    for (name, (worst, seeds)) in &totals {
        let verdict = if seeds.is_empty() { "PASS" } else { "FAIL" };
        summary.push(format!("{verdict} {name}: worst slack {}", num(*worst)));
        if !seeds.is_empty() {
            failed.push(format!("{name} (seeds {seeds:?})"));
        }
    }
    if failed.is_empty() {
        summary.push("all checks passed".to_string());
    } else {
        summary.push(format!("failed: {}", failed.join(", ")));
    }
    sink.finish(&summary)?;
    Ok(if failed.is_empty() {
        Status::Success
    } else {
        Status::VerificationFailed
    })
}

pub fn figure_quadratic(args: FigureQuadraticArgs) -> Result<Status> {
    let inst = load_instance(&args.instance)?;
    let reg = regularizer(&args.regularizer)?;
    let q0 = start(args.q0, &inst, args.instance.seed);
    let fig = quadratic_figure(&inst, &reg, &q0, args.max_iter)?;
    let consts = quadratic_constants(&inst, &reg);

    let mut sink = Sink::open(args.out.as_deref(), &["k", "error_inf", "neg_log_log"])?;
    for r in &fig.rows {
        sink.row([r.k.to_string(), num(r.error), num(r.transformed)])?;
    }
    let mut summary = vec![
        format!("quadratic coefficient A: {}", num(consts.coefficient)),
        format!("region radius 1/A: {}", num(consts.radius)),
        format!("policy iterations: {}", fig.trace.iterations),
        format!("rows inside region: {}", fig.rows.len()),
        format!("last-segment slope: {}", opt(fig.last_segment_slope)),
        format!("reference slope ln(1/2): {}", num(fig.reference_slope)),
    ];
    let status = if fig.rows.is_empty() {
        summary.push(format!(
            "flag: iterates never entered A e_k < 1 within {} iterations",
            args.max_iter
        ));
        Status::NotConverged
    } else {
        Status::Success
    };
    sink.finish(&summary)?;
    Ok(status)
}

pub fn figure_linear(args: FigureLinearArgs) -> Result<Status> {
    let inst = load_instance(&args.instance)?;
    let reg = regularizer(&args.regularizer)?;
    let q0 = start(args.q0, &inst, args.instance.seed);
    let fig = linear_figure(&inst, &reg, args.pev_steps, &q0, args.max_iter)?;
    let ra = &fig.rates;

    let mut sink = Sink::open(args.out.as_deref(), &["k", "error_inf", "log_error"])?;
    for r in &fig.rows {
        sink.row([r.k.to_string(), num(r.error), num(r.log_error)])?;
    }
    let max_ratio = ra
        .per_step_ratios_inf
        .iter()
        .map(|p| p.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    let star_tail: Vec<String> = ra.per_step_ratios_star
        [ra.per_step_ratios_star.len().saturating_sub(3)..]
        .iter()
        .map(|p| num(p.ratio))
        .collect();
    let mut summary = vec![
        format!("evaluation steps M: {}", fig.pev_steps),
        format!("gamma^M: {}", num(ra.gamma_m)),
        format!("iterations: {}", fig.trace.iterations),
        format!("late slope: {}", opt(fig.late_slope)),
        format!("reference slope M ln(gamma): {}", num(fig.reference_slope)),
        format!("largest usable ratio (inf): {}", num(max_ratio)),
        format!("rate estimate (inf): {}", num(ra.asymptotic_rate_estimate)),
        format!("last star-norm ratios: {}", star_tail.join(" ")),
    ];
    if let Some(region) = ra.region {
        summary.push(format!(
            "region constants: Delta {}, delta {}, epsilon {}",
            num(region.delta_cap),
            num(region.delta),
            num(region.epsilon)
        ));
    }
    let status = if fig.trace.converged {
        Status::Success
    } else {
        summary.push(format!(
            "flag: not converged within {} iterations",
            args.max_iter
        ));
        Status::NotConverged
    };
    sink.finish(&summary)?;
    Ok(status)
}
