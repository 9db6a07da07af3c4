//! Run configuration, loaded from a sectioned TOML file such as `base.cfg`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::{DemandEnv, Environment, SyntheticEnv, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_NOISE_FRAC};
use crate::error::{PatrolError, Result};
use crate::gridmap::{CellIndex, GridSpec};
use crate::learner::{IdlenessParams, OnlineConfig, TrainConfig};
use crate::policies::PolicyKind;
use crate::statereward::{ArrivalMap, RewardConfig, ScoreWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    /// Four big and three small disturbances.
    Training,
    /// Two big and three small disturbances.
    Test,
    /// Scheduled hotspots with bounded noise.
    Demand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSection {
    pub map: MapKind,
    pub beta1: f64,
    pub beta2: f64,
    pub hotspots: usize,
    pub noise_frac: f64,
}

impl Default for EnvironmentSection {
    fn default() -> Self {
        Self { map: MapKind::Test, beta1: DEFAULT_BETA1, beta2: DEFAULT_BETA2, hotspots: 6, noise_frac: DEFAULT_NOISE_FRAC }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub horizon: usize,
    pub seed: u64,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self { horizon: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmSection {
    pub drones: usize,
    /// Explicit start cells; empty means draw distinct free cells from the seed.
    pub start_cells: Vec<(usize, usize)>,
}

impl Default for SwarmSection {
    fn default() -> Self {
        Self { drones: 4, start_cells: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: String,
    pub epsilon: f64,
    /// Q-network checkpoint for learned policies.
    pub checkpoint: String,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { kind: "greedy".into(), epsilon: crate::policies::DEFAULT_EPSILON, checkpoint: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub alpha_t: f64,
    pub alpha_i: f64,
    pub arrival: ArrivalMap,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self { alpha_t: 1.0, alpha_i: 1.0, arrival: ArrivalMap::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub drones: usize,
    pub steps: usize,
}

impl Default for CollectSection {
    fn default() -> Self {
        Self { drones: 4, steps: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineSection {
    /// Disable parameter updates during episodes.
    pub frozen: bool,
    /// Run one update epoch every this many steps.
    pub update_period: usize,
    /// Step at which the coordinator drops out; 0 keeps it for the whole run.
    pub outage_step: usize,
}

impl Default for OnlineSection {
    fn default() -> Self {
        let d = OnlineConfig::default();
        Self { frozen: d.frozen, update_period: d.update_period, outage_step: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write an idleness-times-importance frame every this many steps; 0 disables.
    pub frame_every: usize,
    pub force: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), frame_every: 0, force: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub environment: EnvironmentSection,
    pub episode: EpisodeSection,
    pub swarm: SwarmSection,
    pub policy: PolicySection,
    pub idleness: IdlenessParams,
    pub reward: RewardSection,
    pub collect: CollectSection,
    pub train: TrainConfig,
    pub online: OnlineSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::unit(20, 30).expect("valid default grid"),
            environment: EnvironmentSection::default(),
            episode: EpisodeSection::default(),
            swarm: SwarmSection::default(),
            policy: PolicySection::default(),
            idleness: IdlenessParams::default(),
            reward: RewardSection::default(),
            collect: CollectSection::default(),
            train: TrainConfig::desk(),
            online: OnlineSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PatrolError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| PatrolError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            PatrolError::Config(msg) => PatrolError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML rendering. Output settings are
    /// left out so that the same run written to two places hashes alike.
    pub fn hash(&self) -> String {
        let canonical = Self { output: OutputSection::default(), ..self.clone() };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn policy_kind(&self) -> Result<PolicyKind> {
        let kind: PolicyKind = self.policy.kind.parse()?;
        Ok(match kind {
            PolicyKind::RlDecentralized { .. } => PolicyKind::RlDecentralized { epsilon: self.policy.epsilon },
            other => other,
        })
    }

    pub fn reward_config(&self) -> Result<RewardConfig<f64>> {
        Ok(RewardConfig {
            weights: ScoreWeights::new(self.reward.alpha_t, self.reward.alpha_i)?,
            arrival: self.reward.arrival,
        })
    }

    pub fn online_config(&self) -> OnlineConfig {
        OnlineConfig { frozen: self.online.frozen, update_period: self.online.update_period, epsilon: self.policy.epsilon }
    }

    pub fn start_cells(&self) -> Option<Vec<CellIndex>> {
        if self.swarm.start_cells.is_empty() {
            None
        } else {
            Some(self.swarm.start_cells.iter().map(|&c| c.into()).collect())
        }
    }

    /// The evaluation environment described by the `[environment]` section.
    pub fn environment(&self) -> Result<Environment<f64>> {
        self.build_env(self.environment.map)
    }

    /// The synthetic map used to gather pretraining data.
    pub fn training_environment(&self) -> Result<Environment<f64>> {
        self.build_env(MapKind::Training)
    }

    fn build_env(&self, map: MapKind) -> Result<Environment<f64>> {
        let grid = self.grid.clone();
        let horizon = self.episode.horizon;
        let seed = self.episode.seed;
        let env = self.environment.clone();
        Ok(match map {
            MapKind::Training | MapKind::Test => {
                let mut e = if map == MapKind::Training {
                    SyntheticEnv::training_map(grid, horizon, seed)?
                } else {
                    SyntheticEnv::test_map(grid, horizon, seed)?
                };
                e = SyntheticEnv::new(e.grid, e.disturbances, e.horizon, env.beta1, env.beta2, e.bounds)?;
                Environment::Synthetic(e)
            }
            MapKind::Demand => {
                let e = DemandEnv::rush_hour(grid, horizon, env.hotspots, seed)?;
                Environment::Demand(DemandEnv::new(e.grid, e.hotspots, e.seed, env.noise_frac, e.bounds)?)
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode.horizon == 0 {
            return Err(PatrolError::InvalidParameter { name: "horizon", reason: "must be >= 1".into() });
        }
        if self.swarm.drones == 0 {
            return Err(PatrolError::InvalidParameter { name: "drones", reason: "must be >= 1".into() });
        }
        if let Some(starts) = self.start_cells() {
            if starts.len() != self.swarm.drones {
                return Err(PatrolError::InvalidParameter {
                    name: "start_cells",
                    reason: format!("{} cells given for {} drones", starts.len(), self.swarm.drones),
                });
            }
            for (n, c) in starts.iter().enumerate() {
                self.grid.check_free(*c)?;
                if starts[..n].contains(c) {
                    return Err(PatrolError::InvalidParameter {
                        name: "start_cells",
                        reason: format!("cell ({}, {}) listed twice", c.i, c.j),
                    });
                }
            }
        } else if self.grid.num_free() < self.swarm.drones {
            return Err(PatrolError::GridTooSmall { needed: self.swarm.drones, available: self.grid.num_free() });
        }
        if !(0.0..=1.0).contains(&self.policy.epsilon) {
            return Err(PatrolError::InvalidParameter { name: "epsilon", reason: "must lie in [0, 1]".into() });
        }
        self.policy_kind()?;
        self.reward_config()?;
        self.train.validate()?;
        if self.online.update_period == 0 {
            return Err(PatrolError::InvalidParameter { name: "update_period", reason: "must be >= 1".into() });
        }
        if self.collect.drones == 0 || self.collect.steps == 0 {
            return Err(PatrolError::InvalidParameter { name: "collect", reason: "drones and steps must be >= 1".into() });
        }
        self.environment()?;
        Ok(())
    }
}
