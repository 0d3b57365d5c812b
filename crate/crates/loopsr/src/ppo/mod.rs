//! Asymmetric actor-critic PPO: the actor sees only the 4-float
//! proprioceptive observation, the critic sees the 15-float privileged
//! state. Pretraining runs under domain randomization and accumulates a
//! labeled trajectory dataset sampled from periodic policy checkpoints.

mod gae;
mod nets;
mod train;

pub use gae::{compute_gae, normalize_advantages};
pub use nets::ActorCritic;
pub use train::{
    evaluate, ppo_loss_graph, pretrain, ppo_update, EnvPool, EvalMetrics, IterationMetrics,
    MinibatchData, PpoLossVars, PretrainConfig, PretrainResult, RolloutBuffer, UpdateStats,
};

use thiserror::Error;

use crate::numgrad::NumError;
use crate::terrasim::SimError;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("training diverged: {0}")]
    Diverged(String),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatches: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            lr: 3e-4,
            entropy_coef: 0.005,
            value_coef: 0.5,
            epochs: 4,
            minibatches: 4,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lam) {
            return Err(PpoError::Config("gamma and lam must lie in [0, 1]".into()));
        }
        if self.clip <= 0.0 || self.epochs == 0 || self.minibatches == 0 {
            return Err(PpoError::Config("clip must be > 0, epochs/minibatches >= 1".into()));
        }
        Ok(())
    }
}
