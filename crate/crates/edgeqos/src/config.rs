//! TOML configuration file for the command-line tool.
//!
//! Every section and key is optional; missing values take the defaults of
//! [`ExperimentSpec`]. Unknown keys are rejected by their full dotted path.

use std::path::Path;

use edgeqos_core::dqn::{AgentConfig, EpsilonSchedule, NetworkConfig};
use edgeqos_core::nn::{Activation, TrainingConfig};
use edgeqos_core::policies::{Estimator, PolicyKind};
use edgeqos_core::sim::{DisruptionRule, VolatilityModel};
use serde::{Deserialize, Serialize};

use crate::harness::{AverageMode, ExperimentSpec};
use crate::Error;

/// A scalar or a list of scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub devices: OneOrMany<usize>,
    pub acceptance_ratio: OneOrMany<f64>,
    pub executions: u64,
    pub policies: OneOrMany<PolicyKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Sliding-window length of the exported series; cumulative when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub measure_latency: bool,
    pub latency_warmup: usize,
    pub max_series_points: usize,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSection {
    pub gamma: f64,
    pub start_size: usize,
    pub memory_capacity: usize,
    pub target_sync_period: u64,
    pub greedy: bool,
    pub step_norm: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Cluster size at which `learning_rate` applies unscaled; 0 disables
    /// size scaling.
    pub reference_devices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub disruption_rule: DisruptionRule,
    pub volatility_model: VolatilityModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TelSection {
    pub estimator: Estimator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub acceptance_ratio: f64,
    pub warmup: usize,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub experiment: ExperimentSection,
    pub agent: AgentSection,
    pub training: TrainingSection,
    pub sim: SimSection,
    pub tel: TelSection,
    pub bench: BenchSection,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let spec = ExperimentSpec::default();
        Self {
            devices: OneOrMany::Many(spec.devices),
            acceptance_ratio: OneOrMany::Many(spec.ratios),
            executions: spec.executions,
            policies: OneOrMany::Many(spec.policies),
            seed: None,
            window: None,
            measure_latency: spec.measure_latency,
            latency_warmup: spec.latency_warmup,
            max_series_points: spec.max_series_points,
            jobs: spec.jobs,
        }
    }
}

impl Default for AgentSection {
    fn default() -> Self {
        let a = ExperimentSpec::default().agent;
        Self {
            gamma: a.gamma,
            start_size: a.start_size,
            memory_capacity: a.memory_capacity,
            target_sync_period: a.target_sync_period,
            greedy: a.greedy,
            step_norm: a.step_norm,
            epsilon_start: a.exploration.start,
            epsilon_min: a.exploration.min,
            epsilon_decay: a.exploration.decay,
            hidden_layers: a.network.hidden_layers,
            hidden_width: a.network.hidden_width,
            activation: a.network.activation,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = ExperimentSpec::default().agent.training;
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            reference_devices: ExperimentSpec::default().reference_devices,
        }
    }
}

impl Default for SimSection {
    fn default() -> Self {
        let spec = ExperimentSpec::default();
        Self {
            disruption_rule: spec.disruption_rule,
            volatility_model: spec.volatility_model,
        }
    }
}

impl Default for TelSection {
    fn default() -> Self {
        Self {
            estimator: ExperimentSpec::default().estimator,
        }
    }
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            acceptance_ratio: 1.0,
            warmup: 10,
            repetitions: 100,
        }
    }
}

impl CliConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        let de = toml::Deserializer::new(text);
        let mut unknown = Vec::new();
        let cfg: CliConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if let Some(key) = unknown.first() {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn agent_config(&self) -> AgentConfig {
        let a = &self.agent;
        AgentConfig {
            gamma: a.gamma,
            start_size: a.start_size,
            memory_capacity: a.memory_capacity,
            target_sync_period: a.target_sync_period,
            exploration: EpsilonSchedule {
                start: a.epsilon_start,
                min: a.epsilon_min,
                decay: a.epsilon_decay,
            },
            greedy: a.greedy,
            step_norm: a.step_norm,
            training: TrainingConfig {
                learning_rate: self.training.learning_rate,
                batch_size: self.training.batch_size,
            },
            network: NetworkConfig {
                hidden_layers: a.hidden_layers,
                hidden_width: a.hidden_width,
                activation: a.activation,
            },
        }
    }

    /// The experiment described by this config. `seed` must already be
    /// resolved; an unset seed maps to 0.
    pub fn experiment_spec(&self) -> ExperimentSpec {
        let e = &self.experiment;
        ExperimentSpec {
            devices: e.devices.to_vec(),
            ratios: e.acceptance_ratio.to_vec(),
            executions: e.executions,
            policies: e.policies.to_vec(),
            seed: e.seed.unwrap_or(0),
            agent: self.agent_config(),
            reference_devices: self.training.reference_devices,
            estimator: self.tel.estimator,
            disruption_rule: self.sim.disruption_rule,
            volatility_model: self.sim.volatility_model,
            average: match e.window {
                Some(w) => AverageMode::Window(w),
                None => AverageMode::Cumulative,
            },
            measure_latency: e.measure_latency,
            latency_warmup: e.latency_warmup,
            max_series_points: e.max_series_points,
            jobs: e.jobs,
        }
    }
}
