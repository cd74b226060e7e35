//! End-to-end experiment orchestration: identification, baseline,
//! domain construction, the optimization run and metric curves.
//!
//! Repetitions are independent and run in parallel; every source of
//! randomness is derived from the master seed through counter-based
//! streams, so records reproduce bit-for-bit.

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use bops_core::adapt::{DdaConfig, VdConfig};
use bops_core::bo::{
    run_bo, AcquisitionConfig, AdaptationStrategy, BoConfig, BoState, Evaluation, HistoryRecord,
};
use bops_core::domain::{
    independence_domain, pca_domain, rembo_embedding, sample_gain_distribution,
    AffineReparameterization, BoxDomain, GainSampleSet, ReparamKind,
};
use bops_core::lqr::{dlqr, gain_from_ab_params, gain_from_qr_params, GainMatrix, LinearDynamics};
use bops_core::metrics::{aggregate, normalized_performance, MetricSeries};
use bops_core::plants::{camel, linearize, make_plant, rollout, EpisodeConfig, PlantModel};
use bops_core::seed;
use bops_core::sysid::{
    collect_excitation_data, fit_bayesian_linear_model, sample_models, ExcitationInput,
    ExcitationProtocol, ModelPosterior, NoiseMode, Termination,
};

use crate::config::{
    Adaptation, DomainStrategy, ExperimentConfig, InitialDesign, Parameterization, SysIdConfig,
};

mod stream {
    pub const REPETITION: u64 = 100;
    pub const SYSID: u64 = 1;
    pub const MODELS: u64 = 2;
    pub const EMBEDDING: u64 = 3;
    pub const BASELINE: u64 = 4;
    pub const EVALUATION: u64 = 5;
    pub const CAMEL_BOX: u64 = 6;
    pub const INITIAL: u64 = 7;
    pub const BO: u64 = 8;
}

/// Penalty assigned to a diverged rollout, as a multiple of the
/// initial-policy cost.
const DIVERGENCE_PENALTY_FACTOR: f64 = 10.0;

/// Rollouts used to estimate the nominal baseline cost.
const BASELINE_ROLLOUTS: usize = 20;

/// Everything recorded about one repetition.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rep: usize,
    pub rep_seed: u64,
    /// Median nominal-baseline cost; absent for synthetic functions.
    pub j_lqr: Option<f64>,
    /// Cost of the first initial-design evaluation.
    pub j_init: f64,
    /// Initial-design rows (iteration 0) followed by one row per step.
    pub records: Vec<HistoryRecord>,
    /// Incumbent-based metric per iteration index `0..=budget`:
    /// normalized performance for plants, regret for the camel function.
    pub curve: Vec<f64>,
}

/// The per-plant default excitation protocol, with config overrides.
pub fn excitation_protocol(
    plant: &dyn PlantModel,
    plant_name: &str,
    episode: &EpisodeConfig,
    overrides: &SysIdConfig,
) -> ExcitationProtocol {
    const DEG: f64 = std::f64::consts::PI / 180.0;
    let n_x = plant.state_dim();
    let dt = episode.dt;
    // Collection carries sensor-grade noise, configured per plant and
    // independent of the evaluation episode's process noise.
    let mut protocol = match plant_name {
        "cart_pole" => ExcitationProtocol {
            episodes: 5,
            duration_s: 5.0,
            dt,
            input: ExcitationInput::UniformRandom { hold_steps: 1 },
            termination: Termination::AnyExceeds(vec![(1, 30.0 * DEG)]),
            noise_var: vec![1e-6; n_x],
            x0_spread: vec![0.5, 0.0, 0.5, 0.2],
        },
        "quadcopter" => {
            let mut spread = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
            spread.extend([15.0 * DEG, 15.0 * DEG, 30.0 * DEG, 0.5, 0.5, 0.5]);
            ExcitationProtocol {
                episodes: 150,
                duration_s: 1.0,
                dt,
                input: ExcitationInput::UniformRandom { hold_steps: 3 },
                termination: Termination::AnyExceeds(vec![(6, 45.0 * DEG), (7, 45.0 * DEG)]),
                noise_var: vec![1e-6; n_x],
                x0_spread: spread,
            }
        }
        _ => ExcitationProtocol {
            noise_var: vec![1e-4; n_x],
            ..ExcitationProtocol::uniform(1, 5.0, dt, n_x)
        },
    };
    if let Some(episodes) = overrides.episodes {
        protocol.episodes = episodes;
    }
    if let Some(duration) = overrides.duration_s {
        protocol.duration_s = duration;
    }
    if let Some(hold) = overrides.hold_steps {
        protocol.input = ExcitationInput::UniformRandom { hold_steps: hold };
    }
    protocol
}

fn identity_reparam(dim: usize) -> AffineReparameterization {
    AffineReparameterization {
        kind: ReparamKind::Identity,
        offset: vec![0.0; dim],
        transform: DMatrix::identity(dim, dim),
        scales: vec![1.0; dim],
        active_dims: vec![true; dim],
        clip: None,
    }
}

fn ab_parameter_samples(models: &[LinearDynamics]) -> Result<GainSampleSet> {
    let n_x = models[0].state_dim();
    let n_u = models[0].input_dim();
    let dim = n_x * n_x + n_x * n_u;
    let mut samples = DMatrix::zeros(models.len(), dim);
    for (r, model) in models.iter().enumerate() {
        let mut c = 0;
        for i in 0..n_x {
            for j in 0..n_x {
                samples[(r, c)] = model.a()[(i, j)];
                c += 1;
            }
        }
        for i in 0..n_x {
            for j in 0..n_u {
                samples[(r, c)] = model.b()[(i, j)];
                c += 1;
            }
        }
    }
    GainSampleSet::new(samples).map_err(|e| anyhow!("parameter samples: {e}"))
}

/// Constructs the search domain for one repetition of a policy-search
/// experiment.
pub fn build_policy_domain(
    config: &ExperimentConfig,
    posterior: &ModelPosterior,
    episode: &EpisodeConfig,
    rep_seed: u64,
) -> Result<(BoxDomain, AffineReparameterization)> {
    let n_x = posterior.n_x;
    let n_u = posterior.n_u;
    let models = sample_models(posterior, config.n_s, seed::derive(rep_seed, stream::MODELS));

    let samples = match config.parameterization {
        Parameterization::K => {
            if config.domain_strategy == DomainStrategy::Manual {
                None
            } else {
                let gains = sample_gain_distribution(&models, &episode.weights)
                    .map_err(|e| anyhow!("gain sampling: {e}"))?;
                Some(gains.set)
            }
        }
        Parameterization::Ab => {
            if config.domain_strategy == DomainStrategy::Manual {
                None
            } else {
                Some(ab_parameter_samples(&models)?)
            }
        }
        Parameterization::Qr => None,
    };

    match config.domain_strategy {
        DomainStrategy::Independence => {
            let set = samples.expect("set exists for non-manual strategies");
            independence_domain(&set, config.beta).map_err(|e| anyhow!("{e}"))
        }
        DomainStrategy::Pca => {
            let set = samples.expect("set exists for non-manual strategies");
            pca_domain(
                &set,
                config.beta,
                config.pca_truncation,
                config.pca_scale.into(),
            )
            .map_err(|e| anyhow!("{e}"))
        }
        DomainStrategy::Rembo => {
            let set = samples.expect("set exists for non-manual strategies");
            let (ibox, ireparam) = independence_domain(&set, config.beta)
                .map_err(|e| anyhow!("{e}"))?;
            let clip_lower: Vec<f64> = ireparam
                .offset
                .iter()
                .zip(ibox.lower())
                .map(|(o, l)| o + l)
                .collect();
            let clip_upper: Vec<f64> = ireparam
                .offset
                .iter()
                .zip(ibox.upper())
                .map(|(o, u)| o + u)
                .collect();
            let clip = BoxDomain::new(clip_lower, clip_upper).map_err(|e| anyhow!("{e}"))?;
            let d_e = config.rembo_d_e;
            let scale = config.rembo_scale.unwrap_or((d_e as f64).sqrt());
            rembo_embedding(
                set.dim(),
                d_e,
                ireparam.offset,
                clip,
                scale,
                seed::derive(rep_seed, stream::EMBEDDING),
            )
            .map_err(|e| anyhow!("{e}"))
        }
        DomainStrategy::Manual => {
            let dim = match config.parameterization {
                Parameterization::K => n_u * n_x,
                Parameterization::Ab => n_x * n_x + n_x * n_u,
                Parameterization::Qr => n_x + n_u,
            };
            let (lower, upper) = match (&config.manual_lower, &config.manual_upper) {
                (Some(l), Some(u)) => (l.clone(), u.clone()),
                _ if config.parameterization == Parameterization::Qr => {
                    (vec![-3.0; dim], vec![3.0; dim])
                }
                _ => bail!("manual bounds are required"),
            };
            if lower.len() != dim {
                bail!("manual bounds have {} entries, expected {dim}", lower.len());
            }
            let domain = BoxDomain::new(lower, upper).map_err(|e| anyhow!("{e}"))?;
            Ok((domain, identity_reparam(dim)))
        }
    }
}

/// Initial policy parameters for the MAP-policy design.
fn map_policy_parameters(
    config: &ExperimentConfig,
    map_dynamics: &LinearDynamics,
    map_gain: &GainMatrix,
    episode: &EpisodeConfig,
) -> Vec<f64> {
    match config.parameterization {
        Parameterization::K => map_gain.flatten_row_major(),
        Parameterization::Ab => {
            let n_x = map_dynamics.state_dim();
            let n_u = map_dynamics.input_dim();
            let mut theta = Vec::with_capacity(n_x * n_x + n_x * n_u);
            for i in 0..n_x {
                for j in 0..n_x {
                    theta.push(map_dynamics.a()[(i, j)]);
                }
            }
            for i in 0..n_x {
                for j in 0..n_u {
                    theta.push(map_dynamics.b()[(i, j)]);
                }
            }
            theta
        }
        Parameterization::Qr => {
            let mut theta: Vec<f64> = (0..episode.weights.state_dim())
                .map(|i| episode.weights.q()[(i, i)].log10())
                .collect();
            theta.extend(
                (0..episode.weights.input_dim()).map(|i| episode.weights.r()[(i, i)].log10()),
            );
            theta
        }
    }
}

fn adaptation_strategy(config: &ExperimentConfig) -> Option<AdaptationStrategy> {
    match config.adaptation {
        Adaptation::None => None,
        Adaptation::Dda => Some(AdaptationStrategy::Dda(DdaConfig {
            gamma: config.gamma,
            ..DdaConfig::default()
        })),
        Adaptation::Vd => Some(AdaptationStrategy::VolumeDoubling(VdConfig::default())),
    }
}

fn median(costs: &mut [f64]) -> f64 {
    costs.sort_by(f64::total_cmp);
    let n = costs.len();
    if n % 2 == 1 {
        costs[n / 2]
    } else {
        0.5 * (costs[n / 2 - 1] + costs[n / 2])
    }
}

fn initial_records(state: &BoState, count: usize) -> Vec<HistoryRecord> {
    let mut best = f64::INFINITY;
    state.observations()[..count]
        .iter()
        .map(|obs| {
            best = best.min(obs.cost);
            HistoryRecord {
                iter: 0,
                theta_tilde: obs.theta_tilde.clone(),
                theta: state.to_policy(&obs.theta_tilde),
                cost: obs.cost,
                incumbent_cost: best,
                domain_lower: state.domain().lower().to_vec(),
                domain_upper: state.domain().upper().to_vec(),
            }
        })
        .collect()
}

/// Runs one repetition of a policy-search experiment.
pub fn run_policy_repetition(config: &ExperimentConfig, rep: usize) -> Result<RunRecord> {
    let rep_seed = seed::derive2(config.master_seed, stream::REPETITION, rep as u64);
    let (plant, mut episode) = make_plant(&config.plant).map_err(|e| anyhow!("{e}"))?;
    let plant = plant.as_ref();
    let n_x = plant.state_dim();
    let n_u = plant.input_dim();

    // Identification.
    let protocol = excitation_protocol(plant, &config.plant, &episode, &config.sysid);
    let data = collect_excitation_data(plant, &protocol, seed::derive(rep_seed, stream::SYSID))
        .map_err(|e| anyhow!("excitation: {e}"))?;
    let fit = fit_bayesian_linear_model(&data, 1e-6, &NoiseMode::Estimate)
        .map_err(|e| anyhow!("identification: {e}"))?;
    let posterior = fit.posterior;
    let map_dynamics = posterior.map_dynamics();

    // Nominal baseline: LQR from the true linearization, median cost of
    // seeded rollouts.
    let x_eq = DVector::zeros(n_x);
    let u_eq = DVector::zeros(n_u);
    let nominal_lin = linearize(plant, &x_eq, &u_eq, episode.dt).map_err(|e| anyhow!("{e}"))?;
    let nominal_gain = dlqr(&nominal_lin, &episode.weights)
        .map_err(|e| anyhow!("nominal LQR synthesis: {e}"))?;
    let mut baseline_costs: Vec<f64> = (0..BASELINE_ROLLOUTS)
        .map(|i| {
            rollout(
                plant,
                &nominal_gain,
                &episode,
                seed::derive2(rep_seed, stream::BASELINE, i as u64),
            )
            .map(|r| r.cost)
        })
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| anyhow!("baseline rollout: {e}"))?;
    let j_lqr = median(&mut baseline_costs);

    // Initial policy: the LQR of the identified MAP model.
    let map_gain = dlqr(&map_dynamics, &episode.weights)
        .map_err(|e| anyhow!("MAP LQR synthesis: {e}"))?;
    let theta_init = map_policy_parameters(config, &map_dynamics, &map_gain, &episode);
    let init_result = rollout(
        plant,
        &gain_for(config.parameterization, &theta_init, &episode, &map_dynamics)
            .ok_or_else(|| anyhow!("initial policy synthesis failed"))?,
        &episode,
        seed::derive2(rep_seed, stream::EVALUATION, 0),
    )
    .map_err(|e| anyhow!("{e}"))?;
    let j_init = init_result.cost;
    episode.divergence_penalty = DIVERGENCE_PENALTY_FACTOR * j_init;

    // Search domain.
    let (domain, reparam) = build_policy_domain(config, &posterior, &episode, rep_seed)?;

    // Objective over policy parameters.
    let parameterization = config.parameterization;
    let eval_counter = std::cell::Cell::new(1u64);
    let episode_eval = episode.clone();
    let map_dyn_eval = map_dynamics.clone();
    let mut objective = |theta: &[f64]| -> Evaluation {
        let counter = eval_counter.get();
        eval_counter.set(counter + 1);
        let Some(gain) = gain_for(parameterization, theta, &episode_eval, &map_dyn_eval) else {
            return Evaluation::Failure;
        };
        let result = rollout(
            plant,
            &gain,
            &episode_eval,
            seed::derive2(rep_seed, stream::EVALUATION, counter),
        )
        .expect("dimensions agree");
        if result.diverged {
            Evaluation::Failure
        } else {
            Evaluation::Cost(result.cost)
        }
    };

    let bo_config = BoConfig {
        acquisition: AcquisitionConfig {
            kappa: config.kappa,
            ..AcquisitionConfig::default()
        },
        hyper_restarts: 5,
        penalty_cost: j_init,
    };
    let mut state = BoState::new(domain, reparam, bo_config, seed::derive(rep_seed, stream::BO));

    let init_count = match config.initial_design {
        InitialDesign::MapPolicy => {
            let theta_tilde = state.reparam().from_policy_params(&theta_init);
            state.seed_observation(theta_tilde, j_init);
            1
        }
        InitialDesign::Random => {
            let mut rng = seed::rng(seed::derive(rep_seed, stream::INITIAL));
            let points: Vec<Vec<f64>> = (0..config.initial_random_points)
                .map(|_| {
                    (0..state.domain().dim())
                        .map(|i| {
                            state.domain().lower()[i]
                                + rng.random::<f64>() * state.domain().extent(i)
                        })
                        .collect()
                })
                .collect();
            state.init_with_points(&points, &mut objective);
            config.initial_random_points
        }
    };

    let mut records = initial_records(&state, init_count);
    let strategy = adaptation_strategy(config);
    let (_, history) = run_bo(state, &mut objective, config.budget, strategy.as_ref());
    records.extend(history);

    let curve = eta_curve(&records, init_count, config.budget, j_lqr);
    Ok(RunRecord {
        rep,
        rep_seed,
        j_lqr: Some(j_lqr),
        j_init,
        records,
        curve,
    })
}

fn gain_for(
    parameterization: Parameterization,
    theta: &[f64],
    episode: &EpisodeConfig,
    map_dynamics: &LinearDynamics,
) -> Option<GainMatrix> {
    match parameterization {
        Parameterization::K => GainMatrix::from_flat_row_major(
            theta,
            episode.weights.input_dim(),
            episode.weights.state_dim(),
        )
        .ok(),
        Parameterization::Ab => gain_from_ab_params(theta, &episode.weights).ok(),
        Parameterization::Qr => gain_from_qr_params(theta, map_dynamics).ok(),
    }
}

/// Incumbent metric per iteration: index 0 is the initial design, then
/// one entry per step.
fn eta_curve(records: &[HistoryRecord], init_count: usize, budget: usize, j_lqr: f64) -> Vec<f64> {
    let mut curve = Vec::with_capacity(budget + 1);
    let init_best = records[..init_count]
        .iter()
        .map(|r| r.cost)
        .fold(f64::INFINITY, f64::min);
    curve.push(normalized_performance(init_best, j_lqr));
    for record in &records[init_count..] {
        curve.push(normalized_performance(record.incumbent_cost, j_lqr));
    }
    curve
}

/// Samples a camel initial box of the configured edge length whose
/// interior excludes the origin, with the center uniform in [-2, 2]^2.
pub fn sample_camel_box(size: f64, seed_value: u64) -> BoxDomain {
    let mut rng = seed::rng(seed_value);
    loop {
        let center: Vec<f64> = (0..2).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let lower: Vec<f64> = center.iter().map(|c| c - size / 2.0).collect();
        let upper: Vec<f64> = center.iter().map(|c| c + size / 2.0).collect();
        let domain = BoxDomain::new(lower, upper).expect("finite box");
        if !domain.contains(&[0.0, 0.0]) {
            return domain;
        }
    }
}

/// Runs one repetition on the camel function; the curve is the regret of
/// the best value seen.
pub fn run_camel_repetition(config: &ExperimentConfig, rep: usize) -> Result<RunRecord> {
    let rep_seed = seed::derive2(config.master_seed, stream::REPETITION, rep as u64);
    let domain = match (&config.manual_lower, &config.manual_upper) {
        (Some(lower), Some(upper)) => BoxDomain::new(lower.clone(), upper.clone())
            .map_err(|e| anyhow!("manual camel box: {e}"))?,
        _ => sample_camel_box(config.camel_box_size, seed::derive(rep_seed, stream::CAMEL_BOX)),
    };
    if domain.dim() != 2 {
        bail!("camel boxes must be two-dimensional");
    }
    let reparam = identity_reparam(2);

    let mut objective = |theta: &[f64]| Evaluation::Cost(camel(theta));
    let bo_config = BoConfig {
        acquisition: AcquisitionConfig {
            kappa: config.kappa,
            ..AcquisitionConfig::default()
        },
        hyper_restarts: 5,
        penalty_cost: 1e6,
    };
    let mut state = BoState::new(domain, reparam, bo_config, seed::derive(rep_seed, stream::BO));
    let mut rng = seed::rng(seed::derive(rep_seed, stream::INITIAL));
    let points: Vec<Vec<f64>> = (0..config.initial_random_points)
        .map(|_| {
            (0..2)
                .map(|i| state.domain().lower()[i] + rng.random::<f64>() * state.domain().extent(i))
                .collect()
        })
        .collect();
    state.init_with_points(&points, &mut objective);
    let j_init = state.observations()[0].cost;

    let mut records = initial_records(&state, config.initial_random_points);
    let strategy = adaptation_strategy(config);
    let (_, history) = run_bo(state, &mut objective, config.budget, strategy.as_ref());
    records.extend(history);

    // Regret against the known global optimum value 0 at the origin.
    let init_best = records[..config.initial_random_points]
        .iter()
        .map(|r| r.cost)
        .fold(f64::INFINITY, f64::min);
    let mut curve = Vec::with_capacity(config.budget + 1);
    curve.push(init_best.abs());
    for record in &records[config.initial_random_points..] {
        curve.push(record.incumbent_cost.abs());
    }

    Ok(RunRecord {
        rep,
        rep_seed,
        j_lqr: None,
        j_init,
        records,
        curve,
    })
}

/// Runs all repetitions of the configured experiment in parallel.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            if config.is_camel() {
                run_camel_repetition(config, rep)
            } else {
                run_policy_repetition(config, rep)
            }
            .with_context(|| format!("repetition {rep}"))
        })
        .collect()
}

/// Elementwise median and quartiles of the per-repetition curves.
pub fn aggregate_records(records: &[RunRecord]) -> MetricSeries {
    let curves: Vec<Vec<f64>> = records.iter().map(|r| r.curve.clone()).collect();
    aggregate(&curves)
}
