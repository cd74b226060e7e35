//! Discrete-time LQR synthesis.
//!
//! Provides the Riccati fixed-point solver, gain construction
//! `K = dlqr(A, B, Q, R)`, a spectral-radius diagnostic, and the two
//! model-based gain parameterizations used for policy search (tuning the
//! system matrices and tuning the weight-matrix exponents).

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Convergence tolerance for the Riccati fixed-point iteration, applied
/// to `max|P_{k+1} - P_k|` relative to `max(1, max|P_k|)`.
pub const DARE_TOLERANCE: f64 = 1e-10;

/// Iteration cap for the Riccati fixed-point iteration.
pub const DARE_MAX_ITERATIONS: usize = 100_000;

/// Errors from LQR synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControlError {
    /// The Riccati iteration hit the iteration cap. Signals an
    /// unstabilizable or otherwise ill-posed model.
    #[error("riccati iteration did not converge within {0} iterations")]
    NonConvergent(usize),
    /// Intermediate values overflowed or a required factorization failed.
    #[error("non-finite values encountered during riccati iteration")]
    NonFinite,
    /// A matrix failed a type invariant.
    #[error("invalid dynamics: {0}")]
    InvalidDynamics(&'static str),
    /// A weight matrix failed a type invariant.
    #[error("invalid cost weights: {0}")]
    InvalidWeights(&'static str),
    /// A parameter vector had the wrong length.
    #[error("parameter vector has length {actual}, expected {expected}")]
    ParameterLength { expected: usize, actual: usize },
}

/// A discrete-time state-space pair `x_{t+1} = A x_t + B u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearDynamics {
    /// Validates that `a` is square, `b` has matching row count and all
    /// entries are finite.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, ControlError> {
        if a.nrows() != a.ncols() {
            return Err(ControlError::InvalidDynamics("A must be square"));
        }
        if b.nrows() != a.nrows() {
            return Err(ControlError::InvalidDynamics(
                "B row count must equal the state dimension",
            ));
        }
        if b.ncols() == 0 {
            return Err(ControlError::InvalidDynamics("B must have at least one column"));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(ControlError::InvalidDynamics("entries must be finite"));
        }
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

/// Quadratic stage-cost weights: `Q` symmetric PSD, `R` symmetric PD.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CostWeights {
    /// Validates symmetry (1e-12 relative) and that `R` is positive
    /// definite and `Q` positive semidefinite.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, ControlError> {
        if q.nrows() != q.ncols() || r.nrows() != r.ncols() {
            return Err(ControlError::InvalidWeights("Q and R must be square"));
        }
        if !q.iter().chain(r.iter()).all(|v| v.is_finite()) {
            return Err(ControlError::InvalidWeights("entries must be finite"));
        }
        if !is_symmetric(&q, 1e-12) {
            return Err(ControlError::InvalidWeights("Q must be symmetric"));
        }
        if !is_symmetric(&r, 1e-12) {
            return Err(ControlError::InvalidWeights("R must be symmetric"));
        }
        if min_symmetric_eigenvalue(&q) < -1e-10 * scale_of(&q) {
            return Err(ControlError::InvalidWeights("Q must be positive semidefinite"));
        }
        if min_symmetric_eigenvalue(&r) <= 0.0 {
            return Err(ControlError::InvalidWeights("R must be positive definite"));
        }
        Ok(Self { q, r })
    }

    /// Identity `Q` (n_x) and `r_scale * I` (n_u).
    pub fn identity(n_x: usize, n_u: usize, r_scale: f64) -> Self {
        Self {
            q: DMatrix::identity(n_x, n_x),
            r: DMatrix::identity(n_u, n_u) * r_scale,
        }
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }
}

/// A state-feedback gain for the policy `u = -K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    k: DMatrix<f64>,
}

impl GainMatrix {
    pub fn new(k: DMatrix<f64>) -> Result<Self, ControlError> {
        if !k.iter().all(|v| v.is_finite()) {
            return Err(ControlError::InvalidDynamics("gain entries must be finite"));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn input_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.k.ncols()
    }

    /// Row-major flattening of `K`, the coordinate layout used for
    /// direct gain search.
    pub fn flatten_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k.nrows() * self.k.ncols());
        for i in 0..self.k.nrows() {
            for j in 0..self.k.ncols() {
                out.push(self.k[(i, j)]);
            }
        }
        out
    }

    /// Inverse of [`flatten_row_major`](Self::flatten_row_major).
    pub fn from_flat_row_major(theta: &[f64], n_u: usize, n_x: usize) -> Result<Self, ControlError> {
        if theta.len() != n_u * n_x {
            return Err(ControlError::ParameterLength {
                expected: n_u * n_x,
                actual: theta.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n_u, n_x, theta))
    }
}

fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let scale = scale_of(m);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()))
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn check_dims(dynamics: &LinearDynamics, weights: &CostWeights) -> Result<(), ControlError> {
    if weights.state_dim() != dynamics.state_dim() {
        return Err(ControlError::InvalidWeights("Q dimension must match the state"));
    }
    if weights.input_dim() != dynamics.input_dim() {
        return Err(ControlError::InvalidWeights("R dimension must match the input"));
    }
    Ok(())
}

/// Solves the discrete algebraic Riccati equation by fixed-point
/// iteration of
///
/// ```text
/// P <- Q + AᵀPA - AᵀPB (R + BᵀPB)⁻¹ BᵀPA
/// ```
///
/// starting from `P = Q`, until `max|P_{k+1} - P_k|` drops below
/// [`DARE_TOLERANCE`] relative to `max(1, max|P_k|)`.
pub fn solve_dare(dynamics: &LinearDynamics, weights: &CostWeights) -> Result<DMatrix<f64>, ControlError> {
    check_dims(dynamics, weights)?;
    let a = dynamics.a();
    let b = dynamics.b();
    let a_t = a.transpose();
    let b_t = b.transpose();

    let mut p = weights.q().clone();
    for _ in 0..DARE_MAX_ITERATIONS {
        let pa = &p * a;
        let pb = &p * b;
        let btpb = weights.r() + &b_t * &pb;
        let btpa = &b_t * &pa;
        let chol = nalgebra::Cholesky::new(btpb).ok_or(ControlError::NonFinite)?;
        let gain = chol.solve(&btpa);
        let mut next = weights.q() + &a_t * &pa - btpa.transpose() * gain;
        symmetrize(&mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(ControlError::NonFinite);
        }
        let diff = (&next - &p).amax();
        let scale = 1.0_f64.max(max_abs(&p));
        p = next;
        if diff < DARE_TOLERANCE * scale {
            return Ok(p);
        }
    }
    Err(ControlError::NonConvergent(DARE_MAX_ITERATIONS))
}

/// LQR gain `K = (R + BᵀPB)⁻¹ BᵀPA` from the Riccati solution `P`.
pub fn dlqr(dynamics: &LinearDynamics, weights: &CostWeights) -> Result<GainMatrix, ControlError> {
    let p = solve_dare(dynamics, weights)?;
    gain_from_riccati(dynamics, weights, &p)
}

/// Gain construction given an already-solved Riccati matrix.
pub fn gain_from_riccati(
    dynamics: &LinearDynamics,
    weights: &CostWeights,
    p: &DMatrix<f64>,
) -> Result<GainMatrix, ControlError> {
    let b_t = dynamics.b().transpose();
    let btpb = weights.r() + &b_t * p * dynamics.b();
    let btpa = &b_t * p * dynamics.a();
    let chol = nalgebra::Cholesky::new(btpb).ok_or(ControlError::NonFinite)?;
    GainMatrix::new(chol.solve(&btpa))
}

/// Largest eigenvalue magnitude of the closed loop `A - BK`.
pub fn spectral_radius(dynamics: &LinearDynamics, gain: &GainMatrix) -> f64 {
    let closed = dynamics.a() - dynamics.b() * gain.k();
    closed
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, ev| acc.max(ev.re * ev.re + ev.im * ev.im))
        .sqrt()
}

/// Gain from a system-matrix parameter vector: `theta` is reshaped
/// row-major into `A` (all of it first) and then `B`, and the LQR with
/// fixed weights is synthesized from the reshaped model.
pub fn gain_from_ab_params(theta: &[f64], weights: &CostWeights) -> Result<GainMatrix, ControlError> {
    let n_x = weights.state_dim();
    let n_u = weights.input_dim();
    let expected = n_x * n_x + n_x * n_u;
    if theta.len() != expected {
        return Err(ControlError::ParameterLength {
            expected,
            actual: theta.len(),
        });
    }
    let a = DMatrix::from_row_slice(n_x, n_x, &theta[..n_x * n_x]);
    let b = DMatrix::from_row_slice(n_x, n_u, &theta[n_x * n_x..]);
    let dynamics = LinearDynamics::new(a, b)?;
    dlqr(&dynamics, weights)
}

/// Gain from weight exponents: `Q = diag(10^theta_1 .. 10^theta_{n_x})`,
/// `R = diag(10^theta_{n_x+1} .. 10^theta_{n_x+n_u})` applied to a fixed
/// linear model.
pub fn gain_from_qr_params(theta: &[f64], dynamics: &LinearDynamics) -> Result<GainMatrix, ControlError> {
    let n_x = dynamics.state_dim();
    let n_u = dynamics.input_dim();
    let expected = n_x + n_u;
    if theta.len() != expected {
        return Err(ControlError::ParameterLength {
            expected,
            actual: theta.len(),
        });
    }
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(ControlError::InvalidWeights("exponents must be finite"));
    }
    let q = DMatrix::from_diagonal(&DVector::from_iterator(
        n_x,
        theta[..n_x].iter().map(|t| 10.0_f64.powf(*t)),
    ));
    let r = DMatrix::from_diagonal(&DVector::from_iterator(
        n_u,
        theta[n_x..].iter().map(|t| 10.0_f64.powf(*t)),
    ));
    let weights = CostWeights::new(q, r)?;
    dlqr(dynamics, &weights)
}
