//! Shared fixtures for the criterion benchmarks.

use regpi_core::mdp::{random_instance, random_value_vector};
use regpi_core::{MdpInstance, RegularizerSpec, ValueVector};

/// Seeded instance, Shannon regularizer with `N = 5`, and a seeded start.
pub fn fixture(
    n: usize,
    m: usize,
    gamma: f64,
    seed: u64,
) -> (MdpInstance, RegularizerSpec, ValueVector) {
    let inst = random_instance(n, m, gamma, seed).expect("valid dimensions");
    let reg = RegularizerSpec::shannon(5.0).expect("positive smoothing");
    let q0 = random_value_vector(n, m, gamma, seed);
    (inst, reg, q0)
}
