//! Bayesian optimization for linear state-feedback policy search.
//!
//! This crate bundles the numerical machinery needed to tune linear
//! policies `u = -K x` on simulated plants with very few rollouts:
//!
//! * [`lqr`] — discrete-time Riccati solver, LQR gain synthesis and the
//!   gain parameterizations used for policy search (direct gains, system
//!   matrices, weight exponents).
//! * [`sysid`] — excitation-data collection and Bayesian linear
//!   regression over linear dynamics models.
//! * [`domain`] — search-domain construction from sampled LQR gains:
//!   per-coordinate boxes, eigenspace (PCA) boxes and random embeddings.
//! * [`gp`] — Gaussian-process regression with an ARD squared-exponential
//!   kernel, analytic gradients and evidence-based hyperparameter fits.
//! * [`bo`] — the optimization loop: UCB acquisition, multistart
//!   acquisition maximization, incumbent tracking.
//! * [`adapt`] — domain growth during optimization, either guided by the
//!   surrogate gradient or on a fixed volume-doubling schedule.
//! * [`plants`] — simulated benchmark plants (double integrator,
//!   cart-pole, quadcopter) plus episodic rollouts with quadratic cost.
//! * [`metrics`] — regret and normalized-performance bookkeeping.
//!
//! The crate is `no_std`-compatible (it requires `alloc`); all file and
//! process concerns live in the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod adapt;
pub mod bo;
pub mod domain;
pub mod gp;
pub mod lqr;
pub mod metrics;
pub mod plants;
pub mod seed;
pub mod sysid;
