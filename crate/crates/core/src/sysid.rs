//! Excitation-data collection and Bayesian linear model identification.
//!
//! Transitions `(x_t, u_t, x_{t+1})` recorded on a plant are fit with
//! per-output-row Bayesian linear regression on the regressor
//! `z_t = [x_t; u_t]`, yielding a Gaussian posterior over the entries of
//! the stacked matrix `[A B]`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::lqr::LinearDynamics;
use crate::plants::{Episode, PlantModel};
use crate::seed;

/// Condition-number threshold above which a fit is flagged rank deficient.
pub const RANK_DEFICIENT_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SysIdError {
    #[error("excitation produced no transitions")]
    EmptyData,
    #[error("need at least {needed} transitions, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("trajectory data is dimensionally inconsistent")]
    InconsistentData,
    #[error("invalid posterior: {0}")]
    InvalidPosterior(&'static str),
}

/// Recorded state/input trajectories, grouped into episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    pub dt: f64,
    pub episodes: Vec<Episode>,
}

impl TrajectoryData {
    pub fn state_dim(&self) -> usize {
        self.episodes
            .first()
            .and_then(|e| e.states.first())
            .map_or(0, |s| s.len())
    }

    pub fn input_dim(&self) -> usize {
        self.episodes
            .first()
            .and_then(|e| e.inputs.first())
            .map_or(0, |u| u.len())
    }

    pub fn transition_count(&self) -> usize {
        self.episodes.iter().map(Episode::transition_count).sum()
    }

    /// Iterates transitions `(x_t, u_t, x_{t+1})` across all episodes.
    pub fn transitions(&self) -> impl Iterator<Item = (&DVector<f64>, &DVector<f64>, &DVector<f64>)> {
        self.episodes.iter().flat_map(|ep| {
            ep.inputs
                .iter()
                .enumerate()
                .map(move |(t, u)| (&ep.states[t], u, &ep.states[t + 1]))
        })
    }

    fn validate(&self) -> Result<(), SysIdError> {
        let n_x = self.state_dim();
        let n_u = self.input_dim();
        for ep in &self.episodes {
            if ep.states.len() != ep.inputs.len() + 1 {
                return Err(SysIdError::InconsistentData);
            }
            if ep.states.iter().any(|s| s.len() != n_x) || ep.inputs.iter().any(|u| u.len() != n_u) {
                return Err(SysIdError::InconsistentData);
            }
        }
        Ok(())
    }
}

/// Gaussian posterior over the entries of `[A B]`, vectorized row-major
/// over the horizontally stacked matrix (row `j` holds the regression
/// weights of output `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n_x: usize,
    pub n_u: usize,
}

impl ModelPosterior {
    pub fn new(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        n_x: usize,
        n_u: usize,
    ) -> Result<Self, SysIdError> {
        let dim = n_x * (n_x + n_u);
        if mean.len() != dim || covariance.nrows() != dim || covariance.ncols() != dim {
            return Err(SysIdError::InvalidPosterior("dimension mismatch"));
        }
        if !mean.iter().all(|v| v.is_finite()) || !covariance.iter().all(|v| v.is_finite()) {
            return Err(SysIdError::InvalidPosterior("entries must be finite"));
        }
        let scale = covariance.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-10 * scale {
                    return Err(SysIdError::InvalidPosterior("covariance must be symmetric"));
                }
            }
        }
        Ok(Self {
            mean,
            covariance,
            n_x,
            n_u,
        })
    }

    /// Reshapes a stacked parameter vector into `(A, B)`.
    pub fn reshape(&self, flat: &DVector<f64>) -> LinearDynamics {
        let d = self.n_x + self.n_u;
        let mut a = DMatrix::zeros(self.n_x, self.n_x);
        let mut b = DMatrix::zeros(self.n_x, self.n_u);
        for row in 0..self.n_x {
            for col in 0..self.n_x {
                a[(row, col)] = flat[row * d + col];
            }
            for col in 0..self.n_u {
                b[(row, col)] = flat[row * d + self.n_x + col];
            }
        }
        LinearDynamics::new(a, b).expect("finite posterior sample")
    }

    /// The maximum a-posteriori dynamics model.
    pub fn map_dynamics(&self) -> LinearDynamics {
        self.reshape(&self.mean)
    }
}

/// Per-output noise handling for the regression.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseMode {
    /// Fixed per-output noise variances.
    Fixed(Vec<f64>),
    /// Use the residual variance of the ridge solution per output.
    Estimate,
}

/// A fitted model with fit diagnostics.
#[derive(Debug, Clone)]
pub struct BlrFit {
    pub posterior: ModelPosterior,
    /// Noise variance used per output row.
    pub noise_variances: Vec<f64>,
    /// True when the regressor Gram matrix condition number exceeded
    /// [`RANK_DEFICIENT_CONDITION`]; the posterior is still defined
    /// through the prior.
    pub rank_deficient: bool,
}

/// Bayesian linear regression from raw regressor/target matrices.
///
/// `regressors` is `n x d` with rows `[x_t; u_t]`, `targets` is `n x n_x`
/// with rows `x_{t+1}`. Accepts `n = 0`, in which case the posterior is
/// exactly the prior `N(0, prior_precision^{-1} I)`.
pub fn fit_blr(
    regressors: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    n_x: usize,
    n_u: usize,
    prior_precision: f64,
    noise: &NoiseMode,
) -> Result<BlrFit, SysIdError> {
    let d = n_x + n_u;
    let n = regressors.nrows();
    if regressors.ncols() != d || targets.ncols() != n_x || targets.nrows() != n {
        return Err(SysIdError::InconsistentData);
    }
    if prior_precision <= 0.0 {
        return Err(SysIdError::InvalidPosterior("prior precision must be positive"));
    }

    let gram = regressors.transpose() * regressors;
    let xty = regressors.transpose() * targets;

    let rank_deficient = if n == 0 {
        false
    } else {
        let eig = gram.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        min <= 0.0 || max / min > RANK_DEFICIENT_CONDITION
    };

    // Ridge solution, used for noise estimation.
    let ridge = {
        let reg = &gram + DMatrix::identity(d, d) * prior_precision;
        reg.cholesky()
            .ok_or(SysIdError::InvalidPosterior("ridge system not positive definite"))?
            .solve(&xty)
    };

    let noise_variances: Vec<f64> = match noise {
        NoiseMode::Fixed(values) => {
            if values.len() != n_x || values.iter().any(|v| !(*v > 0.0)) {
                return Err(SysIdError::InvalidPosterior("noise variances must be positive"));
            }
            values.clone()
        }
        NoiseMode::Estimate => (0..n_x)
            .map(|j| {
                if n == 0 {
                    return 1.0;
                }
                let residual = targets.column(j) - regressors * ridge.column(j);
                (residual.norm_squared() / n as f64).max(1e-12)
            })
            .collect(),
    };

    let dim = n_x * d;
    let mut mean = DVector::zeros(dim);
    let mut covariance = DMatrix::zeros(dim, dim);
    for j in 0..n_x {
        let precision = &gram / noise_variances[j] + DMatrix::identity(d, d) * prior_precision;
        let chol = precision
            .cholesky()
            .ok_or(SysIdError::InvalidPosterior("posterior precision not positive definite"))?;
        let sigma = chol.inverse();
        let mu = &sigma * (xty.column(j) / noise_variances[j]);
        for a in 0..d {
            mean[j * d + a] = mu[a];
            for b in 0..d {
                covariance[(j * d + a, j * d + b)] = 0.5 * (sigma[(a, b)] + sigma[(b, a)]);
            }
        }
    }

    let posterior = ModelPosterior::new(mean, covariance, n_x, n_u)?;
    Ok(BlrFit {
        posterior,
        noise_variances,
        rank_deficient,
    })
}

/// Fits the dynamics posterior from recorded trajectories. Requires at
/// least `n_x + n_u` transitions.
pub fn fit_bayesian_linear_model(
    data: &TrajectoryData,
    prior_precision: f64,
    noise: &NoiseMode,
) -> Result<BlrFit, SysIdError> {
    data.validate()?;
    let n_x = data.state_dim();
    let n_u = data.input_dim();
    let n = data.transition_count();
    if n == 0 {
        return Err(SysIdError::EmptyData);
    }
    if n < n_x + n_u {
        return Err(SysIdError::InsufficientData {
            needed: n_x + n_u,
            got: n,
        });
    }
    let d = n_x + n_u;
    let mut regressors = DMatrix::zeros(n, d);
    let mut targets = DMatrix::zeros(n, n_x);
    for (row, (x, u, x_next)) in data.transitions().enumerate() {
        for i in 0..n_x {
            regressors[(row, i)] = x[i];
            targets[(row, i)] = x_next[i];
        }
        for i in 0..n_u {
            regressors[(row, n_x + i)] = u[i];
        }
    }
    fit_blr(&regressors, &targets, n_x, n_u, prior_precision, noise)
}

/// Draws `n_s` dynamics models from the posterior. Deterministic for a
/// fixed seed; a rank-deficient covariance gets `1e-10` diagonal jitter
/// before factorization.
pub fn sample_models(posterior: &ModelPosterior, n_s: usize, seed_value: u64) -> Vec<LinearDynamics> {
    let dim = posterior.mean.len();
    if posterior.covariance.amax() == 0.0 {
        return (0..n_s).map(|_| posterior.map_dynamics()).collect();
    }
    let mut jitter = 0.0;
    let factor = loop {
        let candidate = &posterior.covariance + DMatrix::identity(dim, dim) * jitter;
        if let Some(chol) = candidate.cholesky() {
            break chol;
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        assert!(jitter < 1.0, "posterior covariance is not PSD");
    };
    let l = factor.l();
    let mut rng = seed::rng(seed_value);
    (0..n_s)
        .map(|_| {
            let z = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let flat = &posterior.mean + &l * z;
            posterior.reshape(&flat)
        })
        .collect()
}

/// How excitation inputs are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum ExcitationInput {
    /// Uniform random inputs within the actuator bounds, resampled every
    /// `hold_steps` integration steps.
    UniformRandom { hold_steps: usize },
}

/// When an excitation episode ends early.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    None,
    /// Stop once any listed state index exceeds its limit in magnitude.
    AnyExceeds(Vec<(usize, f64)>),
}

/// Excitation protocol: input distribution, termination predicate,
/// repetition count and per-episode duration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationProtocol {
    pub episodes: usize,
    pub duration_s: f64,
    pub dt: f64,
    pub input: ExcitationInput,
    pub termination: Termination,
    /// Process-noise variances during collection, per state.
    pub noise_var: Vec<f64>,
    /// Half-widths of a uniform distribution over episode start states;
    /// zero starts every episode at the origin. States that never move
    /// under short excitation (positions, integrator chains) need a
    /// nonzero spread to be identifiable.
    pub x0_spread: Vec<f64>,
}

impl ExcitationProtocol {
    /// Random inputs for `episodes` repetitions of `duration_s` seconds,
    /// starting from the origin.
    pub fn uniform(episodes: usize, duration_s: f64, dt: f64, n_x: usize) -> Self {
        Self {
            episodes,
            duration_s,
            dt,
            input: ExcitationInput::UniformRandom { hold_steps: 5 },
            termination: Termination::None,
            noise_var: alloc::vec![1e-4; n_x],
            x0_spread: alloc::vec![0.0; n_x],
        }
    }
}

/// Runs the excitation protocol on a plant from the zero state and
/// returns the concatenated transitions of all repetitions. Deterministic
/// for a fixed seed.
pub fn collect_excitation_data(
    plant: &dyn PlantModel,
    protocol: &ExcitationProtocol,
    seed_value: u64,
) -> Result<TrajectoryData, SysIdError> {
    let n_x = plant.state_dim();
    let n_u = plant.input_dim();
    if protocol.noise_var.len() != n_x || protocol.x0_spread.len() != n_x {
        return Err(SysIdError::InconsistentData);
    }
    let steps_per_episode = (protocol.duration_s / protocol.dt).round() as usize;
    let limits = plant.input_limits();
    let noise_std: Vec<f64> = protocol.noise_var.iter().map(|v| v.max(0.0).sqrt()).collect();

    let mut episodes = Vec::new();
    for ep in 0..protocol.episodes {
        let mut rng = seed::rng(seed::derive(seed_value, ep as u64));
        let mut x = DVector::from_iterator(
            n_x,
            protocol.x0_spread.iter().map(|s| {
                let r: f64 = rng.random();
                (2.0 * r - 1.0) * s
            }),
        );
        let mut states = Vec::with_capacity(steps_per_episode + 1);
        let mut inputs = Vec::with_capacity(steps_per_episode);
        states.push(x.clone());
        let mut held = DVector::zeros(n_u);
        for t in 0..steps_per_episode {
            let resample = match protocol.input {
                ExcitationInput::UniformRandom { hold_steps } => {
                    hold_steps <= 1 || t % hold_steps.max(1) == 0
                }
            };
            if resample {
                for i in 0..n_u {
                    let r: f64 = rng.random();
                    held[i] = (2.0 * r - 1.0) * limits[i];
                }
            }
            let mut next = plant.step(&x, &held, protocol.dt);
            for i in 0..n_x {
                let z: f64 = rng.sample(StandardNormal);
                next[i] += noise_std[i] * z;
            }
            inputs.push(held.clone());
            states.push(next.clone());
            x = next;
            let done = match &protocol.termination {
                Termination::None => false,
                Termination::AnyExceeds(limits) => limits
                    .iter()
                    .any(|(idx, bound)| x[*idx].abs() > *bound),
            };
            if done {
                break;
            }
        }
        if !inputs.is_empty() {
            episodes.push(Episode { states, inputs });
        }
    }

    let data = TrajectoryData {
        dt: protocol.dt,
        episodes,
    };
    if data.transition_count() == 0 {
        return Err(SysIdError::EmptyData);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{make_plant, CartPole, DoubleIntegrator};
    use approx::assert_abs_diff_eq;

    fn scalar_trajectory(a: f64, b: f64, n: usize, seed_value: u64) -> TrajectoryData {
        let mut rng = seed::rng(seed_value);
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let mut x = 1.0;
        states.push(DVector::from_element(1, x));
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
            x = a * x + b * u;
            inputs.push(DVector::from_element(1, u));
            states.push(DVector::from_element(1, x));
        }
        TrajectoryData {
            dt: 0.01,
            episodes: alloc::vec![Episode { states, inputs }],
        }
    }

    #[test]
    fn collect_double_integrator_500_transitions() {
        let plant = DoubleIntegrator;
        let protocol = ExcitationProtocol::uniform(1, 5.0, 0.01, 2);
        let data = collect_excitation_data(&plant, &protocol, 0).unwrap();
        assert_eq!(data.transition_count(), 500);
    }

    #[test]
    fn collect_cart_pole_truncates_on_angle() {
        let plant = CartPole::default();
        let mut protocol = ExcitationProtocol::uniform(5, 5.0, 0.01, 4);
        protocol.termination =
            Termination::AnyExceeds(alloc::vec![(1, 30.0 * core::f64::consts::PI / 180.0)]);
        let data = collect_excitation_data(&plant, &protocol, 1).unwrap();
        assert_eq!(data.episodes.len(), 5);
        assert!(data.transition_count() > 0);
        let lengths: Vec<usize> = data.episodes.iter().map(Episode::transition_count).collect();
        assert!(lengths.iter().all(|l| *l < 500), "episodes should truncate: {lengths:?}");
        assert!(lengths.windows(2).any(|w| w[0] != w[1]), "lengths should vary: {lengths:?}");
    }

    #[test]
    fn collect_zero_duration_is_empty() {
        let plant = DoubleIntegrator;
        let protocol = ExcitationProtocol::uniform(3, 0.0, 0.01, 2);
        assert_eq!(collect_excitation_data(&plant, &protocol, 0), Err(SysIdError::EmptyData));
    }

    #[test]
    fn collect_is_deterministic() {
        let (plant, _) = make_plant("cart_pole").unwrap();
        let mut protocol = ExcitationProtocol::uniform(3, 2.0, 0.01, 4);
        protocol.termination =
            Termination::AnyExceeds(alloc::vec![(1, 30.0 * core::f64::consts::PI / 180.0)]);
        let a = collect_excitation_data(plant.as_ref(), &protocol, 7).unwrap();
        let b = collect_excitation_data(plant.as_ref(), &protocol, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prior_only_fit_returns_prior() {
        let fit = fit_blr(
            &DMatrix::zeros(0, 2),
            &DMatrix::zeros(0, 1),
            1,
            1,
            4.0,
            &NoiseMode::Estimate,
        )
        .unwrap();
        assert_eq!(fit.posterior.mean.amax(), 0.0);
        assert!((fit.posterior.covariance.clone() - DMatrix::identity(2, 2) * 0.25).amax() < 1e-12);
    }

    #[test]
    fn noiseless_scalar_fit_matches_least_squares() {
        let data = scalar_trajectory(0.9, 0.1, 50, 3);
        let fit = fit_bayesian_linear_model(&data, 1e-8, &NoiseMode::Estimate).unwrap();
        assert_abs_diff_eq!(fit.posterior.mean[0], 0.9, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.posterior.mean[1], 0.1, epsilon = 1e-6);
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn duplicated_data_shrinks_covariance() {
        let data = scalar_trajectory(0.9, 0.1, 30, 5);
        let single = fit_bayesian_linear_model(&data, 1.0, &NoiseMode::Fixed(alloc::vec![1e-2]))
            .unwrap()
            .posterior;
        let mut doubled = data.clone();
        doubled.episodes.extend(data.episodes.iter().cloned());
        let double = fit_bayesian_linear_model(&doubled, 1.0, &NoiseMode::Fixed(alloc::vec![1e-2]))
            .unwrap()
            .posterior;
        let gap = &single.covariance - &double.covariance;
        let min_eig = gap
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-12, "covariance must shrink in Loewner order");
    }

    #[test]
    fn huge_prior_precision_pins_mean_at_zero() {
        let data = scalar_trajectory(0.9, 0.1, 50, 3);
        let fit = fit_bayesian_linear_model(&data, 1e12, &NoiseMode::Estimate).unwrap();
        assert!(fit.posterior.mean.amax() < 1e-6);
    }

    #[test]
    fn covariance_is_block_diagonal_across_rows() {
        let plant = DoubleIntegrator;
        let protocol = ExcitationProtocol::uniform(1, 2.0, 0.01, 2);
        let data = collect_excitation_data(&plant, &protocol, 2).unwrap();
        let fit = fit_bayesian_linear_model(&data, 1e-6, &NoiseMode::Estimate).unwrap();
        let p = &fit.posterior;
        let d = p.n_x + p.n_u;
        for i in 0..p.mean.len() {
            for j in 0..p.mean.len() {
                if i / d != j / d {
                    assert_eq!(p.covariance[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn posterior_contracts_with_more_data() {
        // Median over 20 seeds of the MAP error as the dataset doubles;
        // the larger datasets extend the smaller ones.
        let mut errors = [Vec::new(), Vec::new(), Vec::new()];
        for seed_value in 0..20 {
            let mut rng = seed::rng(seed::derive(99, seed_value));
            let mut states = Vec::new();
            let mut inputs = Vec::new();
            let mut x = 0.5;
            states.push(DVector::from_element(1, x));
            for _ in 0..200 {
                let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 1e-2;
                x = 0.9 * x + 0.1 * u + noise;
                inputs.push(DVector::from_element(1, u));
                states.push(DVector::from_element(1, x));
            }
            for (slot, n) in [(0usize, 50usize), (1, 100), (2, 200)] {
                let data = TrajectoryData {
                    dt: 0.01,
                    episodes: alloc::vec![Episode {
                        states: states[..=n].to_vec(),
                        inputs: inputs[..n].to_vec(),
                    }],
                };
                let fit = fit_bayesian_linear_model(&data, 1e-6, &NoiseMode::Estimate).unwrap();
                let err = (fit.posterior.mean[0] - 0.9)
                    .abs()
                    .max((fit.posterior.mean[1] - 0.1).abs());
                errors[slot].push(err);
            }
        }
        let medians: Vec<f64> = errors
            .iter_mut()
            .map(|errs| {
                errs.sort_by(f64::total_cmp);
                errs[errs.len() / 2]
            })
            .collect();
        assert!(
            medians[0] > medians[1] && medians[1] > medians[2],
            "median MAP error should contract: {medians:?}"
        );
    }

    #[test]
    fn zero_covariance_samples_are_the_map() {
        let posterior = ModelPosterior::new(
            DVector::from_column_slice(&[0.5, 1.0]),
            DMatrix::zeros(2, 2),
            1,
            1,
        )
        .unwrap();
        let models = sample_models(&posterior, 5, 0);
        for m in models {
            assert_eq!(m.a()[(0, 0)], 0.5);
            assert_eq!(m.b()[(0, 0)], 1.0);
        }
    }

    #[test]
    fn sample_mean_approaches_posterior_mean() {
        let posterior = ModelPosterior::new(
            DVector::from_column_slice(&[0.5, 1.0]),
            DMatrix::from_diagonal(&DVector::from_column_slice(&[0.04, 0.09])),
            1,
            1,
        )
        .unwrap();
        let models = sample_models(&posterior, 10_000, 123);
        let mean_a = models.iter().map(|m| m.a()[(0, 0)]).sum::<f64>() / models.len() as f64;
        let se = 0.2 / (models.len() as f64).sqrt();
        assert!((mean_a - 0.5).abs() < 4.0 * se, "{mean_a} vs 0.5 +- {}", 4.0 * se);
    }

    #[test]
    fn sampling_is_deterministic() {
        let posterior = ModelPosterior::new(
            DVector::from_column_slice(&[0.5, 1.0]),
            DMatrix::from_diagonal(&DVector::from_column_slice(&[0.04, 0.09])),
            1,
            1,
        )
        .unwrap();
        let a = sample_models(&posterior, 10, 7);
        let b = sample_models(&posterior, 10, 7);
        assert_eq!(a, b);
    }
}
