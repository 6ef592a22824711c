use regpi_core::figures::*;
use regpi_core::mdp::*;
use regpi_core::*;
fn main() {
    let reg = RegularizerSpec::shannon(5.0).unwrap();
    for seed in [42u64, 0, 1, 2, 3] {
        let inst = random_instance(5, 5, 0.8, seed).unwrap();
        let q0 = random_value_vector(5, 5, 0.8, seed);
        let q = quadratic_figure(&inst, &reg, &q0, 50).unwrap();
        println!(
            "{seed} {:?} res {:?}",
            q.trace.errors_inf, q.trace.residual_norms
        );
    }
}
