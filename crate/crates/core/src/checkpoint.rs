//! Versioned JSON checkpoints holding the full training state.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::env::DockingEnv;
use crate::error::{Error, Result};
use crate::nn::{GaussianPolicy, LayerRecord, Mlp, RunningNormalizer};
use crate::ppo::{Agent, BestSnapshot, Optimizers, PpoHyperparams, Trainer};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized agent. Layer weights are stored row-major as `W[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub policy_layers: Vec<LayerRecord>,
    pub log_var: Vec<f64>,
    pub value_layers: Vec<LayerRecord>,
    pub obs_norm: RunningNormalizer,
    pub ret_norm: RunningNormalizer,
}

impl From<&Agent> for AgentRecord {
    fn from(a: &Agent) -> Self {
        Self {
            policy_layers: a.policy.net.to_records(),
            log_var: a.policy.log_var.clone(),
            value_layers: a.value.to_records(),
            obs_norm: a.obs_norm.clone(),
            ret_norm: a.ret_norm.clone(),
        }
    }
}

impl AgentRecord {
    pub fn to_agent(&self) -> Result<Agent> {
        let net = Mlp::from_records(&self.policy_layers).map_err(ckpt)?;
        let value = Mlp::from_records(&self.value_layers).map_err(ckpt)?;
        if self.log_var.len() != net.output_dim() {
            return Err(Error::Checkpoint("log_var length does not match policy output".into()));
        }
        if self.obs_norm.dim() != net.input_dim() || self.obs_norm.m2.len() != net.input_dim() {
            return Err(Error::Checkpoint("normalizer dimension does not match network input".into()));
        }
        let agent = Agent {
            policy: GaussianPolicy { net, log_var: self.log_var.clone() },
            value,
            obs_norm: self.obs_norm.clone(),
            ret_norm: self.ret_norm.clone(),
        };
        if !agent.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(agent)
    }
}

fn ckpt(e: Error) -> Error {
    Error::Checkpoint(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub agent: AgentRecord,
    pub corner_docks: usize,
    pub update: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub master_seed: u64,
    pub updates_done: usize,
    pub episodes_done: u64,
    pub eval_interval: usize,
    /// Current (adapted) PPO settings.
    pub hyper: PpoHyperparams,
    pub agent: AgentRecord,
    pub optimizers: Optimizers,
    pub best: Option<BestRecord>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, config_hash: &str) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            master_seed: t.master_seed,
            updates_done: t.updates_done,
            episodes_done: t.episodes_done,
            eval_interval: t.eval_interval,
            hyper: t.hyper.clone(),
            agent: AgentRecord::from(&t.agent),
            optimizers: t.optimizers.clone(),
            best: t.best.as_ref().map(|b| BestRecord {
                agent: AgentRecord::from(&b.agent),
                corner_docks: b.corner_docks,
                update: b.update,
            }),
        }
    }

    /// Rebuilds the trainer. Refuses checkpoints written under a different config.
    pub fn into_trainer(self, env: DockingEnv, config_hash: &str) -> Result<Trainer> {
        self.check_hash(config_hash)?;
        let agent = self.agent.to_agent()?;
        if self.optimizers.policy.m.len() != agent.policy.num_params()
            || self.optimizers.value.m.len() != agent.value.num_params()
        {
            return Err(Error::Checkpoint("optimizer state does not match network sizes".into()));
        }
        let best = match &self.best {
            Some(b) => Some(BestSnapshot { agent: b.agent.to_agent()?, corner_docks: b.corner_docks, update: b.update }),
            None => None,
        };
        Ok(Trainer {
            env,
            agent,
            optimizers: self.optimizers,
            hyper: self.hyper,
            master_seed: self.master_seed,
            updates_done: self.updates_done,
            episodes_done: self.episodes_done,
            best,
            eval_interval: self.eval_interval,
        })
    }

    pub fn check_hash(&self, config_hash: &str) -> Result<()> {
        if self.config_hash != config_hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written for config {} but the current config hashes to {}",
                self.config_hash, config_hash
            )));
        }
        Ok(())
    }

    /// The agent to evaluate: the best snapshot when requested and present.
    pub fn policy_agent(&self, prefer_best: bool) -> Result<Agent> {
        match (&self.best, prefer_best) {
            (Some(b), true) => b.agent.to_agent(),
            _ => self.agent.to_agent(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }

    /// Writes via a temporary file and rename so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
