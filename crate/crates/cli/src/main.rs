use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regpi_core::{Algorithm, RegularizerKind};

mod commands;
mod output;

/// Regularized MDP solvers: instance generation, solver traces, invariant
/// checks and convergence-figure data.
#[derive(Debug, Parser)]
#[command(name = "regpi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded random instance as JSON.
    Generate(GenerateArgs),
    /// Run a solver and write its trace as CSV.
    Solve(SolveArgs),
    /// Check every invariant and solver property across seeds.
    Verify(VerifyArgs),
    /// Quadratic convergence data for exact policy iteration.
    FigureQuadratic(FigureQuadraticArgs),
    /// Linear convergence data for modified policy iteration.
    FigureLinear(FigureLinearArgs),
}

#[derive(Debug, Clone, Args)]
struct InstanceArgs {
    /// Number of states.
    #[arg(long = "n", default_value_t = 5)]
    n: usize,
    /// Number of actions.
    #[arg(long = "m", default_value_t = 5)]
    m: usize,
    /// Discount factor in (0, 1).
    #[arg(long, default_value_t = 0.8)]
    gamma: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Load the instance from a JSON file instead of generating it.
    #[arg(long, value_name = "PATH")]
    instance: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct RegularizerArgs {
    #[arg(long, value_enum, default_value_t = RegularizerArg::Shannon)]
    regularizer: RegularizerArg,
    /// Smoothing strength.
    #[arg(long = "N", default_value_t = 5.0)]
    smoothing: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegularizerArg {
    Shannon,
    Tsallis,
}

impl From<RegularizerArg> for RegularizerKind {
    fn from(r: RegularizerArg) -> Self {
        match r {
            RegularizerArg::Shannon => RegularizerKind::Shannon,
            RegularizerArg::Tsallis => RegularizerKind::Tsallis,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Vi,
    Pi,
    Mpi,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Vi => Algorithm::ValueIteration,
            AlgorithmArg::Pi => Algorithm::PolicyIteration,
            AlgorithmArg::Mpi => Algorithm::ModifiedPolicyIteration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StartArg {
    Zero,
    /// Seeded uniform draw on [−1/(1−γ), 1/(1−γ)).
    Uniform,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Output file; stdout if absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    regularizer: RegularizerArgs,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Pi)]
    algorithm: AlgorithmArg,
    /// Evaluation sweeps per iteration for `mpi`.
    #[arg(long = "M", default_value_t = 50)]
    pev_steps: usize,
    /// Stop once ‖F(q_k)‖∞ is at most this.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = StartArg::Zero)]
    q0: StartArg,
    /// CSV output file; stdout if absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    regularizer: RegularizerArgs,
    /// Evaluation sweeps used by the inexact Newton check.
    #[arg(long = "M", default_value_t = 50)]
    pev_steps: usize,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Random draws per check and seed.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// CSV output file; stdout if absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Args)]
struct FigureQuadraticArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    regularizer: RegularizerArgs,
    #[arg(long = "max-iter", default_value_t = 100)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = StartArg::Uniform)]
    q0: StartArg,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FigureLinearArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    regularizer: RegularizerArgs,
    #[arg(long = "M", default_value_t = 50)]
    pev_steps: usize,
    #[arg(long = "max-iter", default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = StartArg::Uniform)]
    q0: StartArg,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// How a command finished when it did not hit an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Success,
    VerificationFailed,
    NotConverged,
}

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFICATION: u8 = 2;
const EXIT_NON_CONVERGENCE: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Solve(args) => commands::solve(args),
        Command::Verify(args) => commands::verify(args),
        Command::FigureQuadratic(args) => commands::figure_quadratic(args),
        Command::FigureLinear(args) => commands::figure_linear(args),
    };
    match result {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::VerificationFailed) => ExitCode::from(EXIT_VERIFICATION),
        Ok(Status::NotConverged) => ExitCode::from(EXIT_NON_CONVERGENCE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<regpi_core::Error>() {
        Some(regpi_core::Error::Internal(_)) | Some(regpi_core::Error::InsufficientData(_)) => {
            EXIT_NON_CONVERGENCE
        }
        _ => EXIT_USAGE,
    }
}
