//! Flat `key = value` experiment configuration.

use std::path::Path;

use mild_core::io::{lookup, parse_key_values};
use mild_core::losses::{Aggregation, SurrogateSpec};
use mild_core::synth::{ClassGeometry, ExpertFidelity, SetupKind, DEFAULT_LEAK_ACCURACY};
use mild_core::train::{RhoMode, TrainConfig};
use mild_core::types::{CostType, MarginVector, RewardScheme};
use mild_core::{Error, FeatureMap, Result};

/// What the experiment runs on.
#[derive(Debug, Clone, PartialEq)]
pub enum SetupChoice {
    Coverage(SetupKind),
    /// Region-structured routing analog with per-expert inference costs.
    LlmAnalog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Mild,
    Tdef,
    Oracle,
}

impl MethodChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodChoice::Mild => "mild",
            MethodChoice::Tdef => "tdef",
            MethodChoice::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMapChoice {
    Identity,
    RandomFourier { output_dim: usize, bandwidth: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RhoChoice {
    Formula { rho_bar: f64 },
    Fixed(Vec<f64>),
    Validated { rho_bar: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub setup: SetupChoice,
    pub methods: Vec<MethodChoice>,
    pub reward_scheme: RewardScheme,
    pub cost_type: CostType,
    pub fidelity: ExpertFidelity,
    pub n_classes: usize,
    pub n_samples: usize,
    pub dim: usize,
    pub geometry: ClassGeometry,
    /// Target optimal ratios for the routing analog, percentages or fractions.
    pub targets: Vec<f64>,
    /// Inference cost constants for the routing analog.
    pub betas: Vec<f64>,
    pub feature_map: FeatureMapChoice,
    pub surrogate: SurrogateSpec,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rho: RhoChoice,
    pub seed: u64,
    pub n_seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setup: SetupChoice::Coverage(SetupKind::Severe),
            methods: vec![MethodChoice::Mild, MethodChoice::Tdef, MethodChoice::Oracle],
            reward_scheme: RewardScheme::SumOfOthers,
            cost_type: CostType::ErrorOnly,
            fidelity: ExpertFidelity::Real {
                leak_accuracy: DEFAULT_LEAK_ACCURACY,
            },
            n_classes: 10,
            n_samples: 3000,
            dim: 2,
            geometry: ClassGeometry::default(),
            targets: vec![31.2, 12.0, 56.8],
            betas: vec![1.0, 0.6, 0.1],
            feature_map: FeatureMapChoice::RandomFourier {
                output_dim: 64,
                bandwidth: 1.5,
            },
            surrogate: SurrogateSpec::logistic_sum(),
            lambda: 1e-3,
            learning_rate: 0.5,
            epochs: 150,
            batch_size: 0,
            rho: RhoChoice::Formula { rho_bar: 1.0 },
            seed: 1,
            n_seeds: 5,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::parse(format!("{key}: bad float {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::parse(format!("{key}: bad integer {v:?}")))
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| parse_f64(key, s.trim()))
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let entries = parse_key_values(text)?;
        let mut config = ExperimentConfig::default();
        for (key, value) in &entries {
            config.apply(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "setup" => {
                self.setup = match value {
                    "setup1" => SetupChoice::Coverage(SetupKind::SetupI),
                    "setup2" => SetupChoice::Coverage(SetupKind::SetupII),
                    "setup3" => SetupChoice::Coverage(SetupKind::SetupIII),
                    "severe" => SetupChoice::Coverage(SetupKind::Severe),
                    "llm_analog" => SetupChoice::LlmAnalog,
                    other => {
                        if let Some(rest) = other.strip_prefix("custom:") {
                            SetupChoice::Coverage(SetupKind::Custom(parse_f64_list(
                                key, rest,
                            )?))
                        } else {
                            return Err(Error::parse(format!("unknown setup {other:?}")));
                        }
                    }
                }
            }
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(|m| match m.trim() {
                        "mild" => Ok(MethodChoice::Mild),
                        "tdef" => Ok(MethodChoice::Tdef),
                        "oracle" => Ok(MethodChoice::Oracle),
                        other => Err(Error::parse(format!("unknown method {other:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
            }
            "reward_scheme" => {
                self.reward_scheme = match value {
                    "sum_others" => RewardScheme::SumOfOthers,
                    "complement" => RewardScheme::Complement,
                    other => return Err(Error::parse(format!("unknown scheme {other:?}"))),
                }
            }
            "cost_type" => {
                self.cost_type = match value {
                    "error_only" => CostType::ErrorOnly,
                    "error_plus_cost" => CostType::ErrorPlusCost,
                    other => return Err(Error::parse(format!("unknown cost type {other:?}"))),
                }
            }
            "fidelity" => {
                self.fidelity = match value {
                    "synthetic" => ExpertFidelity::Synthetic,
                    "real" => ExpertFidelity::Real {
                        leak_accuracy: DEFAULT_LEAK_ACCURACY,
                    },
                    other => return Err(Error::parse(format!("unknown fidelity {other:?}"))),
                }
            }
            "leak_accuracy" => {
                self.fidelity = ExpertFidelity::Real {
                    leak_accuracy: parse_f64(key, value)?,
                }
            }
            "n_classes" => self.n_classes = parse_usize(key, value)?,
            "n_samples" => self.n_samples = parse_usize(key, value)?,
            "dim" => self.dim = parse_usize(key, value)?,
            "radius" => self.geometry.radius = parse_f64(key, value)?,
            "variance" => self.geometry.variance = parse_f64(key, value)?,
            "targets" => self.targets = parse_f64_list(key, value)?,
            "betas" => self.betas = parse_f64_list(key, value)?,
            "feature_map" => {
                self.feature_map = match value {
                    "identity" => FeatureMapChoice::Identity,
                    "random_fourier" => FeatureMapChoice::RandomFourier {
                        output_dim: 64,
                        bandwidth: 1.5,
                    },
                    other => {
                        return Err(Error::parse(format!("unknown feature map {other:?}")))
                    }
                }
            }
            "rf_dim" => {
                if let FeatureMapChoice::RandomFourier { output_dim, .. } = &mut self.feature_map
                {
                    *output_dim = parse_usize(key, value)?;
                } else {
                    return Err(Error::parse("rf_dim needs feature_map = random_fourier"));
                }
            }
            "rf_bandwidth" => {
                if let FeatureMapChoice::RandomFourier { bandwidth, .. } = &mut self.feature_map {
                    *bandwidth = parse_f64(key, value)?;
                } else {
                    return Err(Error::parse(
                        "rf_bandwidth needs feature_map = random_fourier",
                    ));
                }
            }
            "tau" => self.surrogate.tau = parse_f64(key, value)?,
            "aggregation" => {
                self.surrogate.aggregation = match value {
                    "sum" => Aggregation::Sum,
                    "max" => Aggregation::Max,
                    other => return Err(Error::parse(format!("unknown aggregation {other:?}"))),
                }
            }
            "lambda" => self.lambda = parse_f64(key, value)?,
            "learning_rate" => self.learning_rate = parse_f64(key, value)?,
            "epochs" => self.epochs = parse_usize(key, value)?,
            "batch_size" => self.batch_size = parse_usize(key, value)?,
            "rho_mode" => {
                self.rho = match value {
                    "formula" => RhoChoice::Formula { rho_bar: 1.0 },
                    "validated" => RhoChoice::Validated { rho_bar: 1.0 },
                    other => {
                        if let Some(rest) = other.strip_prefix("fixed:") {
                            RhoChoice::Fixed(parse_f64_list(key, rest)?)
                        } else {
                            return Err(Error::parse(format!("unknown rho mode {other:?}")));
                        }
                    }
                }
            }
            "rho_bar" => {
                let bar = parse_f64(key, value)?;
                self.rho = match &self.rho {
                    RhoChoice::Validated { .. } => RhoChoice::Validated { rho_bar: bar },
                    RhoChoice::Fixed(_) => {
                        return Err(Error::parse("rho_bar conflicts with fixed rho_mode"))
                    }
                    RhoChoice::Formula { .. } => RhoChoice::Formula { rho_bar: bar },
                };
            }
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| Error::parse(format!("seed: bad integer {value:?}")))?
            }
            "n_seeds" => self.n_seeds = parse_usize(key, value)?,
            other => return Err(Error::parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::parse("methods list is empty"));
        }
        if self.n_seeds == 0 {
            return Err(Error::parse("n_seeds must be at least 1"));
        }
        if self.surrogate != SurrogateSpec::logistic_sum()
            && self
                .methods
                .iter()
                .any(|m| matches!(m, MethodChoice::Mild | MethodChoice::Tdef))
        {
            return Err(Error::parse(
                "only the logistic sum surrogate (tau = 1, aggregation = sum) is trainable",
            ));
        }
        if self.setup == SetupChoice::LlmAnalog && self.targets.len() != self.betas.len() {
            return Err(Error::parse("targets and betas must have matching length"));
        }
        Ok(())
    }

    pub fn setup_name(&self) -> &'static str {
        match &self.setup {
            SetupChoice::Coverage(kind) => kind.as_str(),
            SetupChoice::LlmAnalog => "llm_analog",
        }
    }

    /// Number of experts the configured setup produces.
    pub fn n_experts(&self) -> usize {
        match &self.setup {
            SetupChoice::Coverage(kind) => kind.n_experts(),
            SetupChoice::LlmAnalog => self.betas.len(),
        }
    }

    /// Feature map for a given data seed. The projection seed is derived
    /// from the data seed so every method in a run shares it.
    pub fn feature_map_for(&self, input_dim: usize, seed: u64) -> FeatureMap {
        match &self.feature_map {
            FeatureMapChoice::Identity => FeatureMap::identity(input_dim),
            FeatureMapChoice::RandomFourier {
                output_dim,
                bandwidth,
            } => FeatureMap::random_fourier(
                input_dim,
                *output_dim,
                *bandwidth,
                seed.wrapping_mul(1000).wrapping_add(17),
            ),
        }
    }

    pub fn train_config_for(&self, input_dim: usize, seed: u64) -> Result<TrainConfig> {
        let rho_mode = match &self.rho {
            RhoChoice::Formula { rho_bar } => RhoMode::AutoFormula { rho_bar: *rho_bar },
            RhoChoice::Fixed(values) => RhoMode::Fixed(MarginVector::new(values.clone())?),
            RhoChoice::Validated { rho_bar } => RhoMode::AutoWithValidation {
                rho_bar: *rho_bar,
                neighborhood_halfwidth: 5.0,
                step: 1.0,
            },
        };
        Ok(TrainConfig {
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            rho_mode,
            feature_map: self.feature_map_for(input_dim, seed),
            holdout_fraction: 0.2,
        })
    }
}

/// Convenience lookup used by the binary for optional overrides in configs.
pub fn config_value(text: &str, key: &str) -> Option<String> {
    parse_key_values(text)
        .ok()
        .and_then(|entries| lookup(&entries, key).map(|v| v.to_string()))
}
