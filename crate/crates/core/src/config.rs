//! JSON experiment configuration and the bundled parameter sets.
//!
//! A configuration names the queueing model, the channel, the rate tables
//! and the solver, learning, simulation and sweep settings. `channel` and
//! `rates` may be given inline or as `{"file": "relative/path.json"}`,
//! resolved against the configuration's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, ChannelProcess, CoupledModel, TwoLayerModel};
use crate::learning::LearningConfig;
use crate::mdp::{MdpError, ModelConfig, RateTables, SystemModel};
use crate::policy::InfoLevel;
use crate::sim::SimConfig;
use crate::simplex::LpMethod;
use crate::solvers::RviOptions;

/// Coupled mmWave/sub-6 setup with the buffered mmWave interface.
pub const EXPERIMENT_A: &str = include_str!("../configs/experiment_a.json");
/// Link-state-only channel, unknown to the learner, with a sub-6 rate sweep.
pub const EXPERIMENT_B: &str = include_str!("../configs/experiment_b.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed configuration{}: {source}", .path.as_ref().map(|p| format!(" {}", p.display())).unwrap_or_default())]
    Json { path: Option<PathBuf>, source: serde_json::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentId {
    A,
    B,
    #[serde(rename = "custom")]
    Custom,
}

/// Inline value or a reference to a JSON file holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    File { file: PathBuf },
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    fn resolve(&self, base: &Path) -> Result<T, ConfigError> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::File { file } => {
                let path = base.join(file);
                let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
                serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: Some(path), source })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// Joint (sub-6 state, mmWave capacity level) law per slot, held or
    /// redrawn each slot.
    Coupled(CoupledModel),
    /// Two-layer mmWave chain. With `t_base` set, the link kernel is read
    /// as transitions per `t_base` seconds and rescaled to the slot length.
    TwoLayer {
        model: TwoLayerModel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_base: Option<f64>,
    },
}

impl ChannelSpec {
    pub fn process(&self, tau: f64) -> Result<ChannelProcess, ChannelError> {
        match self {
            ChannelSpec::Coupled(m) => ChannelProcess::from_coupled(&m.at_slot(tau)?),
            ChannelSpec::TwoLayer { model, t_base } => match t_base {
                Some(t) => ChannelProcess::from_two_layer(&model.with_link_timescale(tau, *t)?),
                None => ChannelProcess::from_two_layer(model),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rvi: RviOptions,
    pub lp: LpMethod,
    /// Largest tolerated gap between the RVI and LP average costs.
    pub agreement_tol: f64,
    /// Occupation mass above which a state counts as recurrent.
    pub recurrence_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { rvi: RviOptions::default(), lp: LpMethod::default(), agreement_tol: 1e-6, recurrence_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub sub6_rates: Vec<f64>,
    /// Candidate thresholds for the queue-length baseline.
    pub thetas: Vec<usize>,
    /// Seed of the simulations used to pick the best threshold; evaluation
    /// uses `sim.seed`.
    pub tuning_seed: u64,
    pub tuning_replications: usize,
    /// What the learned policy observes.
    pub learner_info: InfoLevel,
    /// Reference stationary mean mmWave departure time, ms, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_mean_departure_ms: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sub6_rates: (11..=20).map(f64::from).collect(),
            thetas: (1..=10).collect(),
            tuning_seed: 1001,
            tuning_replications: 5,
            learner_info: InfoLevel::LargeScaleCsi,
            reference_mean_departure_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default)]
    pub description: String,
    pub model: ModelConfig,
    pub channel: Source<ChannelSpec>,
    pub rates: Source<RateTables>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub learning: LearningConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

/// A configuration with its file references resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub channel: ChannelSpec,
    pub rates: RateTables,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Json { path: None, source })
    }

    pub fn resolve(self, base: &Path) -> Result<Experiment, ConfigError> {
        let channel = self.channel.resolve(base)?;
        let rates = self.rates.resolve(base)?;
        let exp = Experiment { config: self, channel, rates };
        exp.validate()?;
        Ok(exp)
    }
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: Some(path.to_path_buf()), source })?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a self-contained configuration (no file references).
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        ExperimentConfig::from_json(text)?.resolve(Path::new("."))
    }

    pub fn bundled_a() -> Self {
        Self::from_json(EXPERIMENT_A).expect("bundled configuration is valid")
    }

    pub fn bundled_b() -> Self {
        Self::from_json(EXPERIMENT_B).expect("bundled configuration is valid")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let sim = &self.config.sim;
        if sim.replications == 0 || sim.warmup >= sim.horizon {
            return Err(ConfigError::Invalid("sim needs replications >= 1 and warmup < horizon".into()));
        }
        self.config.learning.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.config.sweep.thetas.contains(&0) {
            return Err(ConfigError::Invalid("thresholds must be at least 1".into()));
        }
        self.model()?;
        Ok(())
    }

    /// Overrides the slot length; a rescaled link chain follows along.
    pub fn with_tau(mut self, tau: f64) -> Result<Self, ConfigError> {
        self.config.model.tau = tau;
        self.validate()?;
        Ok(self)
    }

    pub fn channel_process(&self) -> Result<ChannelProcess, ConfigError> {
        Ok(self.channel.process(self.config.model.tau)?)
    }

    pub fn model(&self) -> Result<SystemModel, ConfigError> {
        Ok(SystemModel::new(self.config.model.clone(), self.rates.clone(), self.channel_process()?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse() {
        let a = Experiment::bundled_a();
        assert_eq!(a.config.experiment, ExperimentId::A);
        assert_eq!(a.model().unwrap().space().len(), 7 * 6 * 4 * 10);
        let b = Experiment::bundled_b();
        assert_eq!(b.model().unwrap().space().len(), 11 * 4 * 3);
    }

    #[test]
    fn file_references_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let doc: serde_json::Value = serde_json::from_str(EXPERIMENT_B).unwrap();
        fs::write(dir.path().join("channel.json"), doc["channel"].to_string()).unwrap();
        fs::write(dir.path().join("rates.json"), doc["rates"].to_string()).unwrap();
        let mut top = doc.clone();
        top["channel"] = serde_json::json!({"file": "channel.json"});
        top["rates"] = serde_json::json!({"file": "rates.json"});
        let path = dir.path().join("exp.json");
        fs::write(&path, top.to_string()).unwrap();
        let loaded = Experiment::load(&path).unwrap();
        assert_eq!(loaded.channel, Experiment::bundled_b().channel);

        top["rates"] = serde_json::json!({"file": "missing.json"});
        fs::write(&path, top.to_string()).unwrap();
        assert!(matches!(Experiment::load(&path), Err(ConfigError::Io { .. })));
    }

    #[test]
    fn invalid_tau_is_a_config_error() {
        assert!(Experiment::bundled_b().with_tau(0.5).is_err());
    }
}
