//! Tabular regularized MDP solvers built on the smoothed Bellman equation
//! `F(q) = γ P f(q) + r − q = 0`.
//!
//! Regularized policy iteration is Newton's method on `F`; modified policy
//! iteration with `M` evaluation sweeps is an inexact Newton method whose
//! linear solve is truncated after `M` Neumann terms. The [`diagnostics`]
//! module measures the convergence bounds these methods satisfy.

pub mod bellman;
pub mod diagnostics;
pub mod error;
pub mod figures;
pub mod linalg;
pub mod mdp;
pub mod regularizer;
pub mod rng;
pub mod solvers;

pub use bellman::{BellmanParts, Linearization};
pub use diagnostics::{InvariantReport, RateAnalysis};
pub use error::{Error, Result};
pub use figures::{LinearFigure, QuadraticFigure};
pub use linalg::DenseMatrix;
pub use mdp::{MdpInstance, PolicyMatrix, ValidationReport, ValueVector};
pub use regularizer::{ProbabilityVector, RegularizerKind, RegularizerSpec};
pub use solvers::{Algorithm, SolverConfig, SolverTrace};
