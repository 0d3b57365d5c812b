//! The lifelong-adaptation loop: collect reward-free deployment
//! trajectories with the deployed policy, identify the environment by
//! fusing retrieved and decoded parameters, soft-update the current
//! simulation configuration, continue PPO training there, and
//! periodically redeploy.
//!
//! The loop never reads the test environment's privileged labels; the
//! deployment side only exposes observations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latentstore::{fuse, ParamsEstimate, ReferenceStore, StoreError};
use crate::numgrad::{AdamConfig, AdamState};
use crate::ppo::{evaluate, ppo_update, ActorCritic, EnvPool, EvalMetrics, PpoConfig, PpoError};
use crate::rng::{splitmix64, Rng};
use crate::terrasim::{
    make_env, rollout, DrRange, EnvParams, RobotParams, TrajectoryRecord, EPISODE_STEPS,
    ROBOT_PARAM_RANGES, TERRAIN_COUNT,
};
use crate::trajcodec::{CodecError, TrajCodec, LATENT_DIM};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Adaptation-loop configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    /// Fusion weight on the retrieved estimate.
    pub alpha: f64,
    /// Soft-update retention of the current terrain distribution.
    pub tau: f64,
    /// Neighbours per retrieval.
    pub knn: usize,
    pub trajectories_per_batch: usize,
    pub iterations_per_episode: usize,
    pub episodes_per_redeploy: usize,
    pub loops: usize,
    pub envs: usize,
    pub steps_per_iteration: usize,
    pub ppo: PpoConfig,
    /// Pretraining DR half-widths R; continual training uses R' = R / 2.
    pub dr_range: DrRange,
    pub difficulty_grid: Vec<f64>,
    pub eval_episodes: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            alpha: 0.8,
            tau: 0.7,
            knn: 16,
            trajectories_per_batch: 5,
            iterations_per_episode: 200,
            episodes_per_redeploy: 10,
            loops: 10,
            envs: 64,
            steps_per_iteration: 24,
            ppo: PpoConfig::default(),
            dr_range: DrRange::from_array([0.3, 0.4, 0.1, 0.25]),
            difficulty_grid: crate::terrasim::DIFFICULTY_GRID.to_vec(),
            eval_episodes: 10,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.tau) {
            return Err(LoopError::Config("alpha and tau must lie in [0, 1]".into()));
        }
        if self.knn == 0 || self.trajectories_per_batch == 0 || self.loops == 0 {
            return Err(LoopError::Config("knn, batch, loops must be positive".into()));
        }
        Ok(())
    }

    /// Continual-training DR half-widths (R' = R / 2).
    pub fn continual_dr(&self) -> DrRange {
        self.dr_range.halved()
    }
}

/// The simulation configuration the loop is currently training in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurrentParams {
    pub terrain_probs: [f64; TERRAIN_COUNT],
    pub robot_params: [f64; 4],
}

impl CurrentParams {
    /// Average-parameter initialization: uniform terrain mix, midpoint
    /// robot parameters.
    pub fn average() -> Self {
        CurrentParams {
            terrain_probs: [1.0 / TERRAIN_COUNT as f64; TERRAIN_COUNT],
            robot_params: RobotParams::midpoint().to_array(),
        }
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        let sum: f64 = self.terrain_probs.iter().sum();
        if self.terrain_probs.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(LoopError::Config("current terrain distribution invalid".into()));
        }
        Ok(())
    }
}

/// c' = tau * c_curr + (1 - tau) * c_hat, componentwise; a simplex by
/// convexity.
pub fn soft_update(
    current: &[f64; TERRAIN_COUNT],
    identified: &[f64; TERRAIN_COUNT],
    tau: f64,
) -> Result<[f64; TERRAIN_COUNT], LoopError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(LoopError::Config(format!("tau {tau} outside [0, 1]")));
    }
    for probs in [current, identified] {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(LoopError::Config("soft_update: invalid simplex".into()));
        }
    }
    let mut out = [0.0; TERRAIN_COUNT];
    for k in 0..TERRAIN_COUNT {
        // c_hat + tau (c_curr - c_hat): exact fixed point at c_hat == c_curr
        out[k] = identified[k] + tau * (current[k] - identified[k]);
    }
    Ok(out)
}

/// Env-sampling spec for continual training: robot parameters are drawn
/// uniformly in c_hat_r +- R' (clamped); c_r itself is set directly, no
/// soft update.
pub fn apply_robot_params(
    identified: &[f64; 4],
    continual_dr: &DrRange,
) -> Result<(RobotParams, DrRange, bool), LoopError> {
    let mut clamped = [0.0; 4];
    let mut was_clamped = false;
    for k in 0..4 {
        let (lo, hi) = ROBOT_PARAM_RANGES[k];
        if identified[k] < lo || identified[k] > hi {
            was_clamped = true;
        }
        clamped[k] = identified[k].clamp(lo, hi);
    }
    continual_dr
        .validate()
        .map_err(|e| LoopError::Config(e.to_string()))?;
    Ok((RobotParams::from_array(clamped), *continual_dr, was_clamped))
}

/// Deployment environments expose observations only. Implementations must
/// not leak privileged state to the loop.
pub trait DeploymentEnv {
    /// Collect one reward-free episode with the given policy action fn.
    fn collect_episode(
        &mut self,
        policy: &mut dyn FnMut(&crate::terrasim::Observation) -> f64,
    ) -> Result<TrajectoryRecord, LoopError>;
}

/// Deployment wrapper around the simulator: each episode realizes a fresh
/// env from the (hidden) test parameters, and the produced records carry
/// no labels.
pub struct SimDeployment {
    params: EnvParams,
    episode_seed: u64,
    episodes: u64,
}

impl SimDeployment {
    pub fn new(params: EnvParams, seed: u64) -> Result<Self, LoopError> {
        params
            .validate()
            .map_err(|e| LoopError::Config(e.to_string()))?;
        Ok(SimDeployment {
            params,
            episode_seed: seed,
            episodes: 0,
        })
    }
}

impl DeploymentEnv for SimDeployment {
    fn collect_episode(
        &mut self,
        policy: &mut dyn FnMut(&crate::terrasim::Observation) -> f64,
    ) -> Result<TrajectoryRecord, LoopError> {
        self.episodes += 1;
        let seed = splitmix64(self.episode_seed.wrapping_add(self.episodes));
        let mut env = make_env(&self.params, seed).map_err(PpoError::Sim)?;
        let (record, _) = rollout(&mut env, policy, EPISODE_STEPS, None).map_err(PpoError::Sim)?;
        Ok(record)
    }
}

/// Per-loop identification and training metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopMetrics {
    pub loop_index: usize,
    pub retrieved: ParamsEstimate,
    pub decoded: ParamsEstimate,
    pub fused: ParamsEstimate,
    pub current_terrain: [f64; TERRAIN_COUNT],
    pub current_robot: [f64; 4],
    /// Difficulty reconstructed from the retrieval neighbours (snapped to
    /// the grid) and used for continual training this loop.
    pub identified_difficulty: f64,
    pub train_mean_reward: f64,
    pub eval: Option<EvalMetrics>,
    pub redeployed: bool,
    pub diverged: bool,
}

pub struct AdaptationResult {
    pub policy: ActorCritic,
    pub metrics: Vec<LoopMetrics>,
    pub final_params: CurrentParams,
}

/// Run the full adaptation loop against a deployment environment.
///
/// `eval_params`, when given, scores the current training policy after
/// every loop (harness-side metric; the loop logic never sees rewards).
#[allow(clippy::too_many_arguments)]
pub fn adaptation_loop(
    cfg: &LoopConfig,
    policy: &ActorCritic,
    codec: &TrajCodec,
    store: &ReferenceStore,
    deployment: &mut dyn DeploymentEnv,
    eval_params: Option<&EnvParams>,
    seed: u64,
) -> Result<AdaptationResult, LoopError> {
    cfg.validate()?;
    if store.is_empty() {
        return Err(LoopError::Config("reference store is empty".into()));
    }

    let mut current = CurrentParams::average();
    let mut trainee = policy.clone();
    let mut deployed = policy.clone();
    let mut adam = AdamState::new(&trainee.params, AdamConfig::with_lr(cfg.ppo.lr));
    let mut rollout_rng = Rng::seed_from(splitmix64(seed ^ 0xada_001));
    let mut update_rng = Rng::seed_from(splitmix64(seed ^ 0xada_002));
    let mut deploy_rng = Rng::seed_from(splitmix64(seed ^ 0xada_003));
    let continual_dr = cfg.continual_dr();

    let mut pool = EnvPool::new(
        EnvParams {
            terrain_probs: current.terrain_probs,
            difficulty: cfg.difficulty_grid.first().copied().unwrap_or(0.6),
            robot_params: RobotParams::from_array(current.robot_params),
            dr_range: continual_dr,
        },
        cfg.difficulty_grid.clone(),
        cfg.envs,
        splitmix64(seed ^ 0xada_004),
    )?;

    let mut metrics = Vec::with_capacity(cfg.loops);
    let mut episodes_since_redeploy = 0usize;
    for loop_index in 1..=cfg.loops {
        // collect a batch of reward-free deployment trajectories
        let mut latents: Vec<[f64; LATENT_DIM]> = Vec::with_capacity(cfg.trajectories_per_batch);
        for _ in 0..cfg.trajectories_per_batch {
            let deployed_ref = &deployed;
            let mut noise = Rng::seed_from(deploy_rng.next_u64());
            let mut act = move |obs: &crate::terrasim::Observation| {
                let (mean, log_std) = deployed_ref
                    .policy_forward(std::slice::from_ref(obs))
                    .expect("policy forward");
                mean[0] + log_std.exp() * noise.normal()
            };
            let mut record = deployment.collect_episode(&mut act)?;
            // the loop never reads deployment-side labels; strip any that a
            // deployment implementation might attach
            record.label = None;
            latents.push(codec.encode_mean(&record)?);
        }

        // batch latent: mean of per-trajectory latents, back on the sphere
        let mut z = [0.0; LATENT_DIM];
        for latent in &latents {
            for (acc, v) in z.iter_mut().zip(latent) {
                *acc += v;
            }
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        z.iter_mut().for_each(|v| *v /= norm);

        // identification: retrieval route + decoded route, fused; the
        // neighbours' difficulty meta reconstructs the difficulty level
        let retrieved = store.knn_retrieve(&z, cfg.knn.min(store.len()))?;
        let (p_e, p_r) = codec.decode_params(&z)?;
        let decoded = ParamsEstimate {
            terrain_probs: p_e,
            robot_params: p_r,
        };
        let fused = fuse(&retrieved.estimate, &decoded, cfg.alpha)?;
        let identified_difficulty = cfg
            .difficulty_grid
            .iter()
            .copied()
            .min_by(|a, b| {
                (a - retrieved.mean_difficulty)
                    .abs()
                    .partial_cmp(&(b - retrieved.mean_difficulty).abs())
                    .unwrap()
            })
            .unwrap_or(0.6);

        // reconstruction: soft-update terrain mix, set robot params with R'
        current.terrain_probs =
            soft_update(&current.terrain_probs, &fused.estimate.terrain_probs, cfg.tau)?;
        let (robot, dr, _) = apply_robot_params(&fused.estimate.robot_params, &continual_dr)?;
        current.robot_params = robot.to_array();
        pool.set_difficulty_grid(vec![identified_difficulty]);
        pool.set_params(EnvParams {
            terrain_probs: current.terrain_probs,
            difficulty: identified_difficulty,
            robot_params: robot,
            dr_range: dr,
        })?;

        // continue training in the reconstructed simulation
        let mut train_reward_acc = 0.0;
        let mut diverged = false;
        let mut last_good = trainee.params.clone();
        for _ in 0..cfg.iterations_per_episode {
            let buffer = pool.collect(&trainee, cfg.steps_per_iteration, &mut rollout_rng)?;
            train_reward_acc += buffer.mean_reward();
            match ppo_update(&buffer, &mut trainee, &mut adam, &cfg.ppo, &mut update_rng) {
                Ok(_) => last_good = trainee.params.clone(),
                Err(PpoError::Diverged(_)) => {
                    trainee.params = last_good;
                    diverged = true;
                    break;
                }
                Err(other) => return Err(other.into()),
            }
        }

        episodes_since_redeploy += 1;
        let mut redeployed = false;
        if episodes_since_redeploy >= cfg.episodes_per_redeploy {
            deployed = trainee.clone();
            episodes_since_redeploy = 0;
            redeployed = true;
        }

        let eval = match eval_params {
            Some(params) => {
                let seeds: Vec<u64> = (0..cfg.eval_episodes as u64)
                    .map(|e| splitmix64(seed ^ (loop_index as u64) << 8 ^ e))
                    .collect();
                Some(evaluate(&trainee, params, &seeds)?)
            }
            None => None,
        };

        metrics.push(LoopMetrics {
            loop_index,
            retrieved: retrieved.estimate,
            decoded,
            fused: fused.estimate,
            current_terrain: current.terrain_probs,
            current_robot: current.robot_params,
            identified_difficulty,
            train_mean_reward: train_reward_acc / cfg.iterations_per_episode.max(1) as f64,
            eval,
            redeployed,
            diverged,
        });
    }

    Ok(AdaptationResult {
        policy: trainee,
        metrics,
        final_params: current,
    })
}
