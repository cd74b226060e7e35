//! `bops`: Bayesian optimization for linear policy search on simulated
//! plants, with model-derived search domains.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bops_cli::config::{
    Adaptation, DomainStrategy, ExperimentConfig, InitialDesign, Parameterization, PcaScaleChoice,
};
use bops_cli::experiment::{
    aggregate_records, excitation_protocol, run_camel_repetition, run_experiment,
    run_policy_repetition,
};
use bops_cli::formats::{
    history_to_jsonl, metrics_to_csv, read_json, trajectory_to_csv, write_file, DomainFile,
    ModelPosteriorFile,
};
use bops_core::domain::{
    independence_domain, pca_domain, rembo_embedding, sample_gain_distribution, BoxDomain,
};
use bops_core::plants::{make_plant, PLANT_NAMES};
use bops_core::seed;
use bops_core::sysid::{collect_excitation_data, fit_bayesian_linear_model, sample_models, NoiseMode};

#[derive(Parser)]
#[command(
    name = "bops",
    about = "Bayesian optimization for linear policy search",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect excitation data on a plant and fit the dynamics posterior.
    Sysid(SysidArgs),
    /// Build a search domain from an identified model posterior.
    Domain(DomainArgs),
    /// Run a single optimization (repetition 0 of the configured
    /// experiment) and write its history as JSON lines.
    Optimize(RunArgs),
    /// Run all repetitions of the configured experiment and write
    /// per-run histories plus an aggregate metrics CSV.
    Benchmark(BenchmarkArgs),
    /// List the available plants.
    ListPlants,
}

#[derive(Args)]
struct SysidArgs {
    /// Plant name (see `list-plants`).
    #[arg(long)]
    plant: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Excitation episodes (plant default when omitted).
    #[arg(long)]
    episodes: Option<usize>,
    /// Episode duration cap in seconds (plant default when omitted).
    #[arg(long)]
    duration: Option<f64>,
    /// Steps each random input is held (plant default when omitted).
    #[arg(long)]
    hold: Option<usize>,
    /// Output CSV for the recorded trajectories.
    #[arg(long)]
    out_data: PathBuf,
    /// Output JSON for the fitted model posterior.
    #[arg(long)]
    out_model: PathBuf,
}

#[derive(Args)]
struct DomainArgs {
    /// Model posterior JSON produced by `sysid`.
    #[arg(long)]
    model: PathBuf,
    /// Plant name; supplies the cost weights for gain synthesis.
    #[arg(long)]
    plant: String,
    /// Domain strategy: independence, pca or rembo.
    #[arg(long)]
    strategy: String,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Dynamics models sampled from the posterior.
    #[arg(long, default_value_t = 1000)]
    n_s: usize,
    #[arg(long, default_value_t = 1e-6)]
    truncation: f64,
    /// PCA scale reading: sqrt_eigenvalue or eigenvalue.
    #[arg(long, default_value = "sqrt_eigenvalue")]
    pca_scale: String,
    /// Embedding dimension for rembo.
    #[arg(long, default_value_t = 10)]
    d_e: usize,
    /// Half-width of the embedded box (sqrt(d_e) when omitted).
    #[arg(long)]
    embedding_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by `optimize` and `benchmark`; every flag overrides the
/// matching config-file field.
#[derive(Args)]
struct ConfigOverrides {
    /// Experiment configuration JSON (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    plant: Option<String>,
    /// k, ab or qr.
    #[arg(long)]
    parameterization: Option<String>,
    /// independence, pca, rembo or manual.
    #[arg(long)]
    domain_strategy: Option<String>,
    /// none, dda or vd.
    #[arg(long)]
    adaptation: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    n_s: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    pca_truncation: Option<f64>,
    /// sqrt_eigenvalue or eigenvalue.
    #[arg(long)]
    pca_scale: Option<String>,
    #[arg(long)]
    rembo_d_e: Option<usize>,
    #[arg(long)]
    rembo_scale: Option<f64>,
    /// Comma-separated manual lower bounds.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    manual_lower: Option<Vec<f64>>,
    /// Comma-separated manual upper bounds.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    manual_upper: Option<Vec<f64>>,
    #[arg(long)]
    camel_box_size: Option<f64>,
    /// map_policy or random.
    #[arg(long)]
    initial_design: Option<String>,
    #[arg(long)]
    initial_random_points: Option<usize>,
    #[arg(long)]
    sysid_episodes: Option<usize>,
    #[arg(long)]
    sysid_duration: Option<f64>,
    #[arg(long)]
    sysid_hold: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Output JSON-lines history.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Output directory for per-run histories and the aggregate CSV.
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_variant<T: serde::de::DeserializeOwned>(kind: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| anyhow!("invalid {kind} `{value}`"))
}

impl ConfigOverrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.plant {
            config.plant = v.clone();
        }
        if let Some(v) = &self.parameterization {
            config.parameterization = parse_variant::<Parameterization>("parameterization", v)?;
        }
        if let Some(v) = &self.domain_strategy {
            config.domain_strategy = parse_variant::<DomainStrategy>("domain strategy", v)?;
        }
        if let Some(v) = &self.adaptation {
            config.adaptation = parse_variant::<Adaptation>("adaptation", v)?;
        }
        if let Some(v) = self.beta {
            config.beta = v;
        }
        if let Some(v) = self.gamma {
            config.gamma = v;
        }
        if let Some(v) = self.kappa {
            config.kappa = v;
        }
        if let Some(v) = self.n_s {
            config.n_s = v;
        }
        if let Some(v) = self.budget {
            config.budget = v;
        }
        if let Some(v) = self.repetitions {
            config.repetitions = v;
        }
        if let Some(v) = self.master_seed {
            config.master_seed = v;
        }
        if let Some(v) = self.pca_truncation {
            config.pca_truncation = v;
        }
        if let Some(v) = &self.pca_scale {
            config.pca_scale = parse_variant::<PcaScaleChoice>("pca scale", v)?;
        }
        if let Some(v) = self.rembo_d_e {
            config.rembo_d_e = v;
        }
        if let Some(v) = self.rembo_scale {
            config.rembo_scale = Some(v);
        }
        if let Some(v) = &self.manual_lower {
            config.manual_lower = Some(v.clone());
        }
        if let Some(v) = &self.manual_upper {
            config.manual_upper = Some(v.clone());
        }
        if let Some(v) = self.camel_box_size {
            config.camel_box_size = v;
        }
        if let Some(v) = &self.initial_design {
            config.initial_design = parse_variant::<InitialDesign>("initial design", v)?;
        }
        if let Some(v) = self.initial_random_points {
            config.initial_random_points = v;
        }
        if let Some(v) = self.sysid_episodes {
            config.sysid.episodes = Some(v);
        }
        if let Some(v) = self.sysid_duration {
            config.sysid.duration_s = Some(v);
        }
        if let Some(v) = self.sysid_hold {
            config.sysid.hold_steps = Some(v);
        }
        Ok(config)
    }
}

fn cmd_sysid(args: &SysidArgs) -> Result<()> {
    let (plant, episode) = make_plant(&args.plant).map_err(|e| anyhow!("{e}"))?;
    let overrides = bops_cli::config::SysIdConfig {
        episodes: args.episodes,
        duration_s: args.duration,
        hold_steps: args.hold,
    };
    let protocol = excitation_protocol(plant.as_ref(), &args.plant, &episode, &overrides);
    let data = collect_excitation_data(plant.as_ref(), &protocol, args.seed)
        .map_err(|e| anyhow!("excitation: {e}"))?;
    let fit = fit_bayesian_linear_model(&data, 1e-6, &NoiseMode::Estimate)
        .map_err(|e| anyhow!("identification: {e}"))?;
    if fit.rank_deficient {
        eprintln!("warning: regressor Gram matrix is badly conditioned; posterior falls back to the prior in unexcited directions");
    }
    write_file(&args.out_data, &trajectory_to_csv(&data))?;
    let model = ModelPosteriorFile::from_posterior(&fit.posterior);
    write_file(&args.out_model, &serde_json::to_string_pretty(&model)?)?;
    println!(
        "recorded {} transitions over {} episodes; posterior written to {}",
        data.transition_count(),
        data.episodes.len(),
        args.out_model.display()
    );
    Ok(())
}

fn cmd_domain(args: &DomainArgs) -> Result<()> {
    let (_, episode) = make_plant(&args.plant).map_err(|e| anyhow!("{e}"))?;
    let posterior = read_json::<ModelPosteriorFile>(&args.model)?.into_posterior()?;
    let models = sample_models(&posterior, args.n_s, seed::derive(args.seed, 1));
    let gains = sample_gain_distribution(&models, &episode.weights).map_err(|e| anyhow!("{e}"))?;
    if gains.failed > 0 {
        eprintln!(
            "note: {} of {} sampled models had no stabilizing gain and were skipped",
            gains.failed,
            models.len()
        );
    }
    let (domain, reparam) = match args.strategy.as_str() {
        "independence" => independence_domain(&gains.set, args.beta).map_err(|e| anyhow!("{e}"))?,
        "pca" => {
            let mode = match args.pca_scale.as_str() {
                "sqrt_eigenvalue" => bops_core::domain::PcaScale::SqrtEigenvalue,
                "eigenvalue" => bops_core::domain::PcaScale::Eigenvalue,
                other => bail!("unknown pca scale `{other}`"),
            };
            pca_domain(&gains.set, args.beta, args.truncation, mode).map_err(|e| anyhow!("{e}"))?
        }
        "rembo" => {
            let (ibox, ireparam) =
                independence_domain(&gains.set, args.beta).map_err(|e| anyhow!("{e}"))?;
            let clip = BoxDomain::new(
                ireparam.offset.iter().zip(ibox.lower()).map(|(o, l)| o + l).collect(),
                ireparam.offset.iter().zip(ibox.upper()).map(|(o, u)| o + u).collect(),
            )
            .map_err(|e| anyhow!("{e}"))?;
            let scale = args.embedding_scale.unwrap_or((args.d_e as f64).sqrt());
            rembo_embedding(
                gains.set.dim(),
                args.d_e,
                ireparam.offset,
                clip,
                scale,
                seed::derive(args.seed, 2),
            )
            .map_err(|e| anyhow!("{e}"))?
        }
        other => bail!("unknown domain strategy `{other}`"),
    };
    let file = DomainFile::from_domain(&domain, &reparam);
    write_file(&args.out, &serde_json::to_string_pretty(&file)?)?;
    println!(
        "{}-dimensional search box written to {}",
        domain.dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_optimize(args: &RunArgs) -> Result<()> {
    let config = args.overrides.resolve()?;
    config.validate()?;
    let record = if config.is_camel() {
        run_camel_repetition(&config, 0)?
    } else {
        run_policy_repetition(&config, 0)?
    };
    write_file(&args.out, &history_to_jsonl(&record.records)?)?;
    let final_metric = record.curve.last().copied().unwrap_or(f64::NAN);
    match record.j_lqr {
        Some(j_lqr) => println!(
            "initial cost {:.6}, baseline {:.6}, final normalized performance {:.4}",
            record.j_init, j_lqr, final_metric
        ),
        None => println!(
            "initial value {:.6}, final regret {:.6}",
            record.j_init, final_metric
        ),
    }
    println!("history written to {}", args.out.display());
    Ok(())
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let config = args.overrides.resolve()?;
    config.validate()?;
    let records = run_experiment(&config)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    write_file(
        &args.out_dir.join("config.json"),
        &serde_json::to_string_pretty(&config)?,
    )?;
    for record in &records {
        let path = args.out_dir.join(format!("run_{:03}.jsonl", record.rep));
        write_file(&path, &history_to_jsonl(&record.records)?)?;
    }
    let series = aggregate_records(&records);
    write_file(&args.out_dir.join("aggregate.csv"), &metrics_to_csv(&series))?;
    println!(
        "{} runs written to {}; final median metric {:.4}",
        records.len(),
        args.out_dir.display(),
        series.median.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_list_plants() -> Result<()> {
    for name in PLANT_NAMES {
        let (plant, episode) = make_plant(name).map_err(|e| anyhow!("{e}"))?;
        println!(
            "{name}: {} states, {} inputs, dt {} s, horizon {} s, x0 {:?}",
            plant.state_dim(),
            plant.input_dim(),
            episode.dt,
            episode.horizon_s,
            episode.x0.iter().cloned().collect::<Vec<f64>>()
        );
    }
    println!("camel: synthetic 2-dimensional test function (manual boxes)");
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Sysid(args) => cmd_sysid(args),
        Command::Domain(args) => cmd_domain(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::ListPlants => cmd_list_plants(),
    }
}
