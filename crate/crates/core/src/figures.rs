//! Data series for convergence plots.
//!
//! The quadratic plot shows `−ln ln(1/(A e_k))` against `k` for exact
//! policy iteration; inside the region `A e_k < 1` each step adds at least
//! `ln 2` to `ln ln(1/(A e_k))`, so the series has slope at most `ln(1/2)`.
//! Rows are not cut at the ratio noise floor: an error measured near round-off
//! overstates the true error, which only flattens the plotted slope.
//! The linear plot shows `ln e_k` for modified policy iteration, whose late
//! slope approaches `M ln γ`.

use crate::diagnostics::{analyze_rates, quadratic_constants, RateAnalysis};
use crate::error::Result;
use crate::mdp::MdpInstance;
use crate::regularizer::RegularizerSpec;
use crate::solvers::{run, solve_reference, SolverConfig, SolverTrace};

/// Residual tolerance used to stop figure runs.
pub const FIGURE_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticRow {
    pub k: usize,
    pub error: f64,
    /// `−ln ln(1/(A e_k))`.
    pub transformed: f64,
}

#[derive(Debug, Clone)]
pub struct QuadraticFigure {
    pub coefficient: f64,
    /// Iterates inside the region with nonzero error.
    pub rows: Vec<QuadraticRow>,
    /// Slope between the last two rows, if there are two.
    pub last_segment_slope: Option<f64>,
    pub reference_slope: f64,
    pub trace: SolverTrace,
}

pub fn quadratic_figure(
    instance: &MdpInstance,
    reg: &RegularizerSpec,
    q0: &[f64],
    max_iterations: usize,
) -> Result<QuadraticFigure> {
    let q_star = solve_reference(instance, reg)?;
    let cfg = SolverConfig::policy_iteration()
        .with_tolerance(FIGURE_TOLERANCE)
        .with_max_iterations(max_iterations)
        .with_record_trace(false);
    let trace = run(instance, reg, &cfg, q0, Some(&q_star))?;
    let a = quadratic_constants(instance, reg).coefficient;
    let rows: Vec<QuadraticRow> = trace
        .errors_inf
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0.0 && a * e < 1.0)
        .map(|(k, &e)| QuadraticRow {
            k,
            error: e,
            transformed: -(1.0 / (a * e)).ln().ln(),
        })
        .collect();
    let last_segment_slope = match rows.as_slice() {
        [.., p, q] => Some((q.transformed - p.transformed) / (q.k - p.k) as f64),
        _ => None,
    };
    Ok(QuadraticFigure {
        coefficient: a,
        rows,
        last_segment_slope,
        reference_slope: 0.5f64.ln(),
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearRow {
    pub k: usize,
    pub error: f64,
    pub log_error: f64,
}

#[derive(Debug, Clone)]
pub struct LinearFigure {
    pub pev_steps: usize,
    /// Iterates with nonzero error.
    pub rows: Vec<LinearRow>,
    /// Slope of `ln e_k` between the last two rows.
    pub late_slope: Option<f64>,
    /// `M ln γ`.
    pub reference_slope: f64,
    pub rates: RateAnalysis,
    pub trace: SolverTrace,
}

pub fn linear_figure(
    instance: &MdpInstance,
    reg: &RegularizerSpec,
    pev_steps: usize,
    q0: &[f64],
    max_iterations: usize,
) -> Result<LinearFigure> {
    let q_star = solve_reference(instance, reg)?;
    let cfg = SolverConfig::modified_policy_iteration(pev_steps)
        .with_tolerance(FIGURE_TOLERANCE)
        .with_max_iterations(max_iterations);
    let trace = run(instance, reg, &cfg, q0, Some(&q_star))?;
    let rates = analyze_rates(&trace, &q_star, instance, reg)?;
    let rows: Vec<LinearRow> = trace
        .errors_inf
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0.0)
        .map(|(k, &e)| LinearRow {
            k,
            error: e,
            log_error: e.ln(),
        })
        .collect();
    let late_slope = match rows.as_slice() {
        [.., p, q] => Some((q.log_error - p.log_error) / (q.k - p.k) as f64),
        _ => None,
    };
    Ok(LinearFigure {
        pev_steps,
        rows,
        late_slope,
        reference_slope: pev_steps as f64 * instance.gamma.ln(),
        rates,
        trace,
    })
}
