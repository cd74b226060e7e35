//! Shared helpers for the integration suites: random stabilizable
//! systems and an independent value-iteration oracle for the Riccati
//! fixed point.

use bops_core::lqr::{CostWeights, LinearDynamics};
use bops_core::seed;
use nalgebra::DMatrix;
use rand::Rng;

/// Draws a random controllable system with `n_x <= 4`, rescaled so the
/// open-loop spectral radius lands in [0.3, 1.3].
pub fn random_stabilizable_system(seed_value: u64) -> (LinearDynamics, CostWeights) {
    let mut rng = seed::rng(seed_value);
    loop {
        let n_x = 1 + (rng.random::<f64>() * 4.0) as usize;
        let n_u = 1 + (rng.random::<f64>() * 2.0) as usize;
        let mut a = DMatrix::zeros(n_x, n_x);
        for v in a.iter_mut() {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        let rho = a
            .clone()
            .complex_eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, ev| acc.max((ev.re * ev.re + ev.im * ev.im).sqrt()));
        if rho > 1e-6 {
            let target = 0.3 + rng.random::<f64>();
            a *= target / rho;
        }
        let mut b = DMatrix::zeros(n_x, n_u);
        for v in b.iter_mut() {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        // Controllability matrix rank check.
        let mut ctrb = DMatrix::zeros(n_x, n_x * n_u);
        let mut power = b.clone();
        for block in 0..n_x {
            for c in 0..n_u {
                ctrb.set_column(block * n_u + c, &power.column(c));
            }
            power = &a * power;
        }
        let svd = ctrb.svd(false, false);
        let max_sv = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-8 * max_sv)
            .count();
        if rank < n_x {
            continue;
        }
        let dynamics = LinearDynamics::new(a, b).expect("finite random system");
        let weights = CostWeights::identity(n_x, n_u, 1.0);
        return (dynamics, weights);
    }
}

/// Finite-horizon value iteration for the Riccati fixed point, written
/// independently of the library solver. Runs at least `min_steps`
/// backward steps and stops once successive iterates agree to 1e-12.
pub fn value_iteration_oracle(
    dynamics: &LinearDynamics,
    weights: &CostWeights,
    min_steps: usize,
) -> DMatrix<f64> {
    let a = dynamics.a();
    let b = dynamics.b();
    let mut v = weights.q().clone();
    for step in 0..200_000usize {
        let btv = b.transpose() * &v;
        let s = weights.r() + &btv * b;
        let rhs = &btv * a;
        let gain = s.cholesky().expect("R + B'VB is positive definite").solve(&rhs);
        let next = weights.q() + a.transpose() * &v * a - rhs.transpose() * gain;
        // Keep the iterate on the symmetric manifold; rounding asymmetry
        // otherwise grows with the open-loop spectral radius.
        let next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &v).amax();
        v = next;
        if step >= min_steps && diff < 1e-12 {
            break;
        }
    }
    v
}
