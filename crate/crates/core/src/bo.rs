//! The Bayesian-optimization loop.
//!
//! Cost observations are log-transformed; the surrogate is always fit on
//! inputs normalized against the current search box and on standardized
//! targets, so lengthscales and acquisition weights stay scale-free. The
//! normalization divides all dimensions by the largest extent rather
//! than stretching each to unit size: narrow directions of an eigenspace
//! box stay narrow, which is what makes high-dimensional boxes with
//! strongly decaying scales searchable at all. A step proposes the UCB
//! maximizer, evaluates the objective through the affine
//! reparameterization, appends the observation and refits the
//! hyperparameters. An optional adaptation strategy may grow the box
//! after each step, after which the dataset is re-normalized.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::adapt::{dda_step, vd_step, DdaConfig, VdConfig};
use crate::domain::{AffineReparameterization, BoxDomain};
use crate::gp::{fit_hyperparameters, GpDataset, GpPosterior, KernelHyperparams};
use crate::seed;

/// Offset added to costs before the log transform.
pub const COST_EPSILON: f64 = 1e-12;

/// Candidate endpoints closer than this (normalized Euclidean) to an
/// existing observation are passed over when a distinct candidate exists.
const REPROPOSAL_RADIUS: f64 = 1e-6;

/// Number of observations required before domain adaptation engages.
const ADAPTATION_WARMUP: usize = 3;

/// Seed streams for the per-iteration derived seeds.
mod stream {
    pub const ACQUISITION: u64 = 1;
    pub const FIT: u64 = 2;
    pub const OPTIMUM: u64 = 3;
    pub const RENORM_FIT: u64 = 4;
}

/// Upper-confidence-bound acquisition settings and search budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    /// Exploration weight; the acquisition is `-mean + kappa * std`.
    pub kappa: f64,
    /// Uniform multistarts for the inner maximization (the incumbent and
    /// the box center are always added).
    pub multistarts: usize,
    /// Projected-gradient iterations per start.
    pub local_steps: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            kappa: 2.0,
            multistarts: 32,
            local_steps: 100,
        }
    }
}

/// Loop-level settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BoConfig {
    pub acquisition: AcquisitionConfig,
    /// Random restarts for each hyperparameter refit (a warm start from
    /// the previous values is always added).
    pub hyper_restarts: usize,
    /// Cost recorded when the objective reports a failure.
    pub penalty_cost: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            acquisition: AcquisitionConfig::default(),
            hyper_restarts: 5,
            penalty_cost: 1e6,
        }
    }
}

/// Result of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluation {
    /// Observed episode cost, must be positive.
    Cost(f64),
    /// The rollout diverged or the policy could not be synthesized; the
    /// loop records the configured penalty instead.
    Failure,
}

/// One recorded evaluation in search coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Search coordinates of the evaluated point (box units).
    pub theta_tilde: Vec<f64>,
    /// Raw observed (or penalty) cost.
    pub cost: f64,
    /// Log-transformed cost, the quantity the surrogate models.
    pub log_cost: f64,
}

/// How the search box evolves between steps.
#[derive(Debug, Clone, PartialEq)]
pub enum AdaptationStrategy {
    Dda(DdaConfig),
    VolumeDoubling(VdConfig),
}

/// One line of run history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub iter: usize,
    pub theta_tilde: Vec<f64>,
    pub theta: Vec<f64>,
    pub cost: f64,
    pub incumbent_cost: f64,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
}

/// Mutable state of one optimization run.
#[derive(Debug, Clone)]
pub struct BoState {
    reparam: AffineReparameterization,
    domain: BoxDomain,
    initial_extents: Vec<f64>,
    observations: Vec<Observation>,
    incumbent: usize,
    iteration: usize,
    config: BoConfig,
    seed: u64,
    hyper: KernelHyperparams,
    gp: GpPosterior,
}

impl BoState {
    pub fn new(
        domain: BoxDomain,
        reparam: AffineReparameterization,
        config: BoConfig,
        seed_value: u64,
    ) -> Self {
        let d = domain.dim();
        let hyper = KernelHyperparams::default_for_dim(d);
        let gp = GpPosterior::empty(d, hyper.clone());
        Self {
            initial_extents: domain.extents(),
            reparam,
            domain,
            observations: Vec::new(),
            incumbent: 0,
            iteration: 0,
            config,
            seed: seed_value,
            hyper,
            gp,
        }
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn reparam(&self) -> &AffineReparameterization {
        &self.reparam
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn gp(&self) -> &GpPosterior {
        &self.gp
    }

    /// Best observation so far (lowest log cost, earliest wins ties).
    pub fn incumbent(&self) -> Option<&Observation> {
        self.observations.get(self.incumbent)
    }

    /// Policy-space parameters of a search point.
    pub fn to_policy(&self, theta_tilde: &[f64]) -> Vec<f64> {
        self.reparam.to_policy_params(theta_tilde)
    }

    /// Evaluates the objective at the given search points (clipped to the
    /// box) as the initial design, then fits the surrogate once.
    pub fn init_with_points<F>(&mut self, points: &[Vec<f64>], objective: &mut F)
    where
        F: FnMut(&[f64]) -> Evaluation,
    {
        for point in points {
            let theta_tilde = self.domain.clip(point);
            let theta = self.reparam.to_policy_params(&theta_tilde);
            let cost = match objective(&theta) {
                Evaluation::Cost(c) => c,
                Evaluation::Failure => self.config.penalty_cost,
            };
            self.push_observation(theta_tilde, cost);
        }
        self.refit(seed::derive2(self.seed, stream::FIT, self.iteration as u64));
    }

    /// Records an externally evaluated point (must lie in the box).
    pub fn seed_observation(&mut self, theta_tilde: Vec<f64>, cost: f64) {
        let clipped = self.domain.clip(&theta_tilde);
        self.push_observation(clipped, cost);
        self.refit(seed::derive2(self.seed, stream::FIT, self.iteration as u64));
    }

    fn push_observation(&mut self, theta_tilde: Vec<f64>, cost: f64) {
        let log_cost = (cost + COST_EPSILON).ln();
        self.observations.push(Observation {
            theta_tilde,
            cost,
            log_cost,
        });
        let new_idx = self.observations.len() - 1;
        if new_idx == 0 || log_cost < self.observations[self.incumbent].log_cost {
            self.incumbent = new_idx;
        }
    }

    /// Standardization constants of the current log costs.
    fn target_stats(&self) -> (f64, f64) {
        let n = self.observations.len();
        if n == 0 {
            return (0.0, 1.0);
        }
        let mean = self.observations.iter().map(|o| o.log_cost).sum::<f64>() / n as f64;
        let var = self
            .observations
            .iter()
            .map(|o| (o.log_cost - mean) * (o.log_cost - mean))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        (mean, if std > 1e-12 { std } else { 1.0 })
    }

    fn normalized_dataset(&self) -> GpDataset {
        let n = self.observations.len();
        let d = self.domain.dim();
        let (shift, scale) = self.target_stats();
        let mut inputs = DMatrix::zeros(n, d);
        let mut targets = DVector::zeros(n);
        for (r, obs) in self.observations.iter().enumerate() {
            let unit = self.domain.aspect_normalize(&obs.theta_tilde);
            for c in 0..d {
                inputs[(r, c)] = unit[c];
            }
            targets[r] = (obs.log_cost - shift) / scale;
        }
        GpDataset::new(inputs, targets).expect("observations are finite")
    }

    /// Refits hyperparameters on the normalized dataset and rebuilds the
    /// cached surrogate.
    fn refit(&mut self, fit_seed: u64) {
        let dataset = self.normalized_dataset();
        let mut hyper =
            fit_hyperparameters(&dataset, self.config.hyper_restarts, fit_seed, Some(&self.hyper));
        loop {
            match GpPosterior::fit(dataset.clone(), hyper.clone()) {
                Ok(gp) => {
                    self.hyper = hyper;
                    self.gp = gp;
                    return;
                }
                Err(_) => {
                    // Pathological conditioning: back off to a noisier fit.
                    hyper.noise_variance = (hyper.noise_variance * 100.0).min(1.0);
                    assert!(
                        hyper.noise_variance < 1.0,
                        "surrogate fit failed at maximum noise"
                    );
                }
            }
        }
    }

    fn incumbent_unit(&self) -> Option<Vec<f64>> {
        self.incumbent()
            .map(|obs| self.domain.aspect_normalize(&obs.theta_tilde))
    }
}

/// UCB value at a normalized point: `-mean + kappa * sqrt(variance)`;
/// larger is better for cost minimization.
pub fn acquisition_value(gp: &GpPosterior, unit_point: &[f64], config: &AcquisitionConfig) -> f64 {
    let (mean, variance) = gp.posterior(unit_point);
    -mean + config.kappa * variance.sqrt()
}

fn projected_ascent<F>(start: &[f64], upper: &[f64], local_steps: usize, eval: &F) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut point = start.to_vec();
    let (mut value, mut grad) = eval(&point);
    let mut step = 0.1;
    for _ in 0..local_steps {
        let grad_norm = grad.iter().fold(0.0_f64, |acc, g| acc.max(g.abs()));
        if !grad_norm.is_finite() || grad_norm < 1e-10 {
            break;
        }
        let scale = step / grad_norm;
        let trial: Vec<f64> = point
            .iter()
            .zip(&grad)
            .enumerate()
            .map(|(i, (p, g))| (p + scale * g).clamp(0.0, upper[i]))
            .collect();
        let (trial_value, trial_grad) = eval(&trial);
        if trial_value > value {
            point = trial;
            value = trial_value;
            grad = trial_grad;
            step = (step * 1.6).min(0.5);
        } else {
            step *= 0.4;
            if step < 1e-7 {
                break;
            }
        }
    }
    (point, value)
}

fn multistart_maximize<F>(
    gp: &GpPosterior,
    upper: &[f64],
    config: &AcquisitionConfig,
    seed_value: u64,
    incumbent: Option<&[f64]>,
    eval: F,
) -> Vec<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let d = gp.dim();
    debug_assert_eq!(upper.len(), d);
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(config.multistarts + 2);
    starts.push(upper.iter().map(|u| 0.5 * u).collect());
    if let Some(inc) = incumbent {
        starts.push(inc.to_vec());
    }
    let mut rng = seed::rng(seed_value);
    for _ in 0..config.multistarts {
        starts.push((0..d).map(|i| rng.random::<f64>() * upper[i]).collect());
    }
    starts
        .iter()
        .map(|s| projected_ascent(s, upper, config.local_steps, &eval))
        .collect()
}

/// Maximizes the acquisition over the unit box by multistart projected
/// gradient ascent. Deterministic for a fixed seed; candidates that
/// coincide with an already-evaluated input are passed over unless no
/// distinct candidate exists (ties break toward the earliest start).
pub fn maximize_acquisition(
    gp: &GpPosterior,
    upper: &[f64],
    config: &AcquisitionConfig,
    seed_value: u64,
    incumbent: Option<&[f64]>,
) -> Vec<f64> {
    let kappa = config.kappa;
    let candidates = multistart_maximize(gp, upper, config, seed_value, incumbent, |u| {
        let (mean, variance, grad_mean, grad_var) = gp.posterior_with_gradients(u);
        let std = variance.sqrt();
        let value = -mean + kappa * std;
        let grad = grad_mean
            .iter()
            .zip(&grad_var)
            .map(|(gm, gv)| {
                let explore = if std > 1e-9 { kappa * gv / (2.0 * std) } else { 0.0 };
                -gm + explore
            })
            .collect();
        (value, grad)
    });

    let mut best_any: Option<(usize, f64)> = None;
    let mut best_far: Option<(usize, f64)> = None;
    for (idx, (point, value)) in candidates.iter().enumerate() {
        if best_any.is_none_or(|(_, v)| *value > v) {
            best_any = Some((idx, *value));
        }
        let near_data = (0..gp.dataset().len()).any(|r| {
            let row = gp.dataset().input_row(r);
            let dist2: f64 = row
                .iter()
                .zip(point)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist2.sqrt() < REPROPOSAL_RADIUS
        });
        if !near_data && best_far.is_none_or(|(_, v)| *value > v) {
            best_far = Some((idx, *value));
        }
    }
    let chosen = best_far.or(best_any).expect("at least one start").0;
    candidates[chosen].0.clone()
}

/// Minimizes the posterior mean over the unit box (the estimated
/// optimum); exploration weight is ignored and evaluated inputs are not
/// excluded.
pub fn estimated_optimum(
    gp: &GpPosterior,
    upper: &[f64],
    config: &AcquisitionConfig,
    seed_value: u64,
    incumbent: Option<&[f64]>,
) -> Vec<f64> {
    let candidates = multistart_maximize(gp, upper, config, seed_value, incumbent, |u| {
        let (mean, _, grad_mean, _) = gp.posterior_with_gradients(u);
        (-mean, grad_mean.iter().map(|g| -g).collect())
    });
    let mut best = 0;
    for (idx, (_, value)) in candidates.iter().enumerate() {
        if *value > candidates[best].1 {
            best = idx;
        }
    }
    candidates[best].0.clone()
}

/// Runs one iteration: propose, evaluate, record, refit. Objective
/// failures are recorded at the configured penalty cost.
pub fn bo_step<F>(state: &mut BoState, objective: &mut F) -> HistoryRecord
where
    F: FnMut(&[f64]) -> Evaluation,
{
    let acq_seed = seed::derive2(state.seed, stream::ACQUISITION, state.iteration as u64);
    let unit_next = maximize_acquisition(
        &state.gp,
        &state.domain.aspect_upper(),
        &state.config.acquisition,
        acq_seed,
        state.incumbent_unit().as_deref(),
    );
    let theta_tilde = state.domain.aspect_denormalize(&unit_next);
    let theta = state.reparam.to_policy_params(&theta_tilde);
    let cost = match objective(&theta) {
        Evaluation::Cost(c) => c,
        Evaluation::Failure => state.config.penalty_cost,
    };
    state.push_observation(theta_tilde.clone(), cost);
    state.iteration += 1;
    state.refit(seed::derive2(state.seed, stream::FIT, state.iteration as u64));

    HistoryRecord {
        iter: state.iteration,
        theta_tilde,
        theta,
        cost,
        incumbent_cost: state.incumbent().expect("nonempty").cost,
        domain_lower: state.domain.lower().to_vec(),
        domain_upper: state.domain.upper().to_vec(),
    }
}

/// Runs `budget` iterations of [`bo_step`], applying the adaptation
/// strategy after each step once enough observations exist. Returns the
/// final state and the per-iteration history (domain snapshots reflect
/// any growth applied in the same iteration).
pub fn run_bo<F>(
    mut state: BoState,
    objective: &mut F,
    budget: usize,
    adaptation: Option<&AdaptationStrategy>,
) -> (BoState, Vec<HistoryRecord>)
where
    F: FnMut(&[f64]) -> Evaluation,
{
    let mut history = Vec::with_capacity(budget);
    for _ in 0..budget {
        let mut record = bo_step(&mut state, objective);
        if let Some(strategy) = adaptation {
            if state.observations.len() >= ADAPTATION_WARMUP {
                let grown = match strategy {
                    AdaptationStrategy::Dda(config) => {
                        let seed_value =
                            seed::derive2(state.seed, stream::OPTIMUM, state.iteration as u64);
                        let unit_star = estimated_optimum(
                            &state.gp,
                            &state.domain.aspect_upper(),
                            &state.config.acquisition,
                            seed_value,
                            state.incumbent_unit().as_deref(),
                        );
                        let theta_star = state.domain.aspect_denormalize(&unit_star);
                        dda_step(
                            &state.domain,
                            &state.gp,
                            &theta_star,
                            &state.initial_extents,
                            config,
                        )
                    }
                    AdaptationStrategy::VolumeDoubling(config) => {
                        vd_step(&state.domain, state.iteration, config)
                    }
                };
                if grown != state.domain {
                    state.domain = grown;
                    state.refit(seed::derive2(
                        state.seed,
                        stream::RENORM_FIT,
                        state.iteration as u64,
                    ));
                    record.domain_lower = state.domain.lower().to_vec();
                    record.domain_upper = state.domain.upper().to_vec();
                }
            }
        }
        history.push(record);
    }
    (state, history)
}
