//! TOML run configuration and its compatibility hash.
//!
//! Every section and key is optional; omitted values take the Apollo defaults.
//! Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::env::DockingEnv;
use crate::error::{Error, Result};
use crate::lqr::{LqrDesign, LqrSettings};
use crate::ppo::{NetworkConfig, PpoHyperparams};
use crate::reward::RewardConfig;
use crate::scenario::{goal_attitude, ScenarioConfig};

/// Run plumbing that does not affect the learned result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Rayon worker threads; 0 uses all available cores.
    pub workers: usize,
    pub episode_budget: u64,
    pub checkpoint_dir: String,
    /// Updates between `latest` checkpoint writes.
    pub checkpoint_interval: usize,
    /// Updates between corner-case evaluations (0 disables them).
    pub eval_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 0,
            episode_budget: 600_000,
            checkpoint_dir: "runs/default".into(),
            checkpoint_interval: 10,
            eval_interval: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub reward: RewardConfig,
    pub lqr: LqrSettings,
    pub ppo: PpoHyperparams,
    pub network: NetworkConfig,
    pub run: RunConfig,
}

#[derive(Serialize)]
struct HashedParts<'a> {
    scenario: &'a ScenarioConfig,
    reward: &'a RewardConfig,
    lqr: &'a LqrSettings,
    ppo: &'a PpoHyperparams,
    network: &'a NetworkConfig,
    seed: u64,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.ppo.validate()?;
        self.network.validate()?;
        self.reward.build(goal_attitude(&self.scenario))?;
        if self.run.episode_budget == 0 {
            return Err(Error::Config("run: episode_budget must be positive".into()));
        }
        if self.lqr.position_scale <= 0.0 {
            return Err(Error::Config("lqr: position_scale must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of everything that shapes training:
    /// scenario, reward, LQR, PPO, network, and the master seed.
    pub fn hash(&self) -> String {
        let parts = HashedParts {
            scenario: &self.scenario,
            reward: &self.reward,
            lqr: &self.lqr,
            ppo: &self.ppo,
            network: &self.network,
            seed: self.run.seed,
        };
        let json = serde_json::to_vec(&parts).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn lqr_design(&self) -> Result<LqrDesign> {
        self.lqr.design(self.lqr.position_scale, self.scenario.docked_position())
    }

    pub fn build_env(&self) -> Result<DockingEnv> {
        let weights = self.reward.build(goal_attitude(&self.scenario))?;
        DockingEnv::new(self.scenario.clone(), weights, self.lqr_design()?)
    }
}
