//! Experiment configuration: a single JSON document, every field
//! overridable from the command line.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Tune the feedback gain entries directly.
    K,
    /// Tune the system matrices fed to the LQR.
    Ab,
    /// Tune the LQR weight-matrix exponents.
    Qr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainStrategy {
    Independence,
    Pca,
    Rembo,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adaptation {
    None,
    Dda,
    Vd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaScaleChoice {
    SqrtEigenvalue,
    Eigenvalue,
}

impl From<PcaScaleChoice> for bops_core::domain::PcaScale {
    fn from(choice: PcaScaleChoice) -> Self {
        match choice {
            PcaScaleChoice::SqrtEigenvalue => bops_core::domain::PcaScale::SqrtEigenvalue,
            PcaScaleChoice::Eigenvalue => bops_core::domain::PcaScale::Eigenvalue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDesign {
    /// Start from the LQR policy of the identified MAP model.
    MapPolicy,
    /// Start from uniform random points in the search box.
    Random,
}

/// Overrides for the per-plant default excitation protocol.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SysIdConfig {
    pub episodes: Option<usize>,
    pub duration_s: Option<f64>,
    pub hold_steps: Option<usize>,
}

/// One experiment: problem, policy parameterization, domain strategy,
/// adaptation rule and budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// One of the simulated plants, or `camel` for the synthetic
    /// two-dimensional benchmark function.
    pub plant: String,
    pub parameterization: Parameterization,
    pub domain_strategy: DomainStrategy,
    pub adaptation: Adaptation,
    /// Domain half-width in standard deviations.
    pub beta: f64,
    /// Step gain of the gradient-guided domain growth.
    pub gamma: f64,
    /// UCB exploration weight.
    pub kappa: f64,
    /// Dynamics models sampled for domain construction.
    pub n_s: usize,
    /// Optimization iterations after the initial design.
    pub budget: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub pca_truncation: f64,
    pub pca_scale: PcaScaleChoice,
    pub rembo_d_e: usize,
    /// Half-width of the embedded search box; `sqrt(d_e)` when absent.
    pub rembo_scale: Option<f64>,
    pub manual_lower: Option<Vec<f64>>,
    pub manual_upper: Option<Vec<f64>>,
    /// Edge length of sampled initial boxes for camel runs without
    /// explicit manual bounds.
    pub camel_box_size: f64,
    pub initial_design: InitialDesign,
    /// Points in the initial design when `initial_design = random`.
    pub initial_random_points: usize,
    pub sysid: SysIdConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            plant: "double_integrator".to_string(),
            parameterization: Parameterization::K,
            domain_strategy: DomainStrategy::Independence,
            adaptation: Adaptation::None,
            beta: 0.5,
            gamma: 0.3,
            kappa: 2.0,
            n_s: 1000,
            budget: 30,
            repetitions: 10,
            master_seed: 0,
            pca_truncation: 1e-6,
            pca_scale: PcaScaleChoice::SqrtEigenvalue,
            rembo_d_e: 10,
            rembo_scale: None,
            manual_lower: None,
            manual_upper: None,
            camel_box_size: 0.5,
            initial_design: InitialDesign::MapPolicy,
            initial_random_points: 3,
            sysid: SysIdConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    pub fn is_camel(&self) -> bool {
        self.plant == "camel"
    }

    /// Rejects inconsistent combinations before any simulation runs.
    pub fn validate(&self) -> Result<()> {
        if self.is_camel() {
            if self.domain_strategy != DomainStrategy::Manual {
                bail!("the camel function requires the manual domain strategy");
            }
            if self.initial_design == InitialDesign::MapPolicy {
                bail!("the camel function has no dynamics model; use the random initial design");
            }
        } else if !bops_core::plants::PLANT_NAMES.contains(&self.plant.as_str()) {
            bail!("unknown plant `{}`", self.plant);
        }
        if self.domain_strategy == DomainStrategy::Rembo
            && self.parameterization != Parameterization::K
        {
            bail!("the random-embedding domain requires the direct gain parameterization");
        }
        if self.parameterization == Parameterization::Qr
            && self.domain_strategy != DomainStrategy::Manual
        {
            bail!("weight-exponent tuning supports only the manual domain strategy");
        }
        if let (Some(lower), Some(upper)) = (&self.manual_lower, &self.manual_upper) {
            if lower.len() != upper.len() {
                bail!("manual bounds must have equal lengths");
            }
            if lower.iter().zip(upper).any(|(l, u)| l > u) {
                bail!("manual lower bound exceeds upper bound");
            }
        } else if self.domain_strategy == DomainStrategy::Manual
            && !self.is_camel()
            && self.parameterization != Parameterization::Qr
        {
            bail!("the manual domain strategy requires manual_lower and manual_upper");
        }
        if !(self.beta > 0.0) {
            bail!("beta must be positive");
        }
        if !(self.gamma > 0.0) {
            bail!("gamma must be positive");
        }
        if self.kappa < 0.0 {
            bail!("kappa must be nonnegative");
        }
        if self.n_s < 2 {
            bail!("n_s must be at least 2");
        }
        if self.repetitions == 0 {
            bail!("repetitions must be at least 1");
        }
        if !(0.0..1.0).contains(&self.pca_truncation) {
            bail!("pca_truncation must lie in [0, 1)");
        }
        if self.initial_design == InitialDesign::Random && self.initial_random_points == 0 {
            bail!("the random initial design needs at least one point");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn camel_requires_manual_boxes() {
        let config = ExperimentConfig {
            plant: "camel".to_string(),
            ..ExperimentConfig::default()
        };
        assert!(config.validate().is_err());
        let config = ExperimentConfig {
            plant: "camel".to_string(),
            domain_strategy: DomainStrategy::Manual,
            initial_design: InitialDesign::Random,
            ..ExperimentConfig::default()
        };
        config.validate().unwrap();
    }

    #[test]
    fn rembo_requires_gain_parameterization() {
        let config = ExperimentConfig {
            domain_strategy: DomainStrategy::Rembo,
            parameterization: Parameterization::Ab,
            ..ExperimentConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = ExperimentConfig {
            plant: "cart_pole".to_string(),
            domain_strategy: DomainStrategy::Pca,
            adaptation: Adaptation::Dda,
            ..ExperimentConfig::default()
        };
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>("{\"plannt\":\"camel\"}");
        assert!(err.is_err());
    }
}
