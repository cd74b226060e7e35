//! Riccati solver contract over randomized stabilizable systems: oracle
//! agreement, closed-loop stability, symmetry and joint scaling
//! invariance.

mod common;

use bops_core::lqr::{dlqr, solve_dare, spectral_radius, CostWeights};
use common::{random_stabilizable_system, value_iteration_oracle};

#[test]
fn dare_matches_value_iteration_on_200_random_systems() {
    for i in 0..200u64 {
        let (dynamics, weights) = random_stabilizable_system(1000 + i);
        let p = solve_dare(&dynamics, &weights)
            .unwrap_or_else(|e| panic!("system {i} failed to solve: {e}"));
        let oracle = value_iteration_oracle(&dynamics, &weights, 500);
        let gap = (&p - &oracle).amax();
        assert!(gap <= 1e-6, "system {i}: solver/oracle gap {gap}");

        // Symmetric PSD solution.
        assert!((&p - p.transpose()).amax() <= 1e-9, "system {i}: P not symmetric");
        let min_eig = p
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-9, "system {i}: P has eigenvalue {min_eig}");

        // Stabilizing gain.
        let gain = dlqr(&dynamics, &weights).unwrap();
        let rho = spectral_radius(&dynamics, &gain);
        assert!(rho < 1.0, "system {i}: closed loop spectral radius {rho}");
    }
}

#[test]
fn dlqr_is_invariant_to_joint_weight_scaling() {
    for i in 0..50u64 {
        let (dynamics, weights) = random_stabilizable_system(5000 + i);
        let base = dlqr(&dynamics, &weights).unwrap();
        for s in [0.1, 10.0] {
            let scaled = CostWeights::new(weights.q() * s, weights.r() * s).unwrap();
            let gain = dlqr(&dynamics, &scaled).unwrap();
            let gap = (base.k() - gain.k()).amax();
            assert!(gap <= 1e-8, "system {i}, scale {s}: gain gap {gap}");
        }
    }
}
