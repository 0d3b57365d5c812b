//! Rollout collection, the PPO update, pretraining under domain
//! randomization, and policy evaluation.

use serde::{Deserialize, Serialize};

use crate::numgrad::{adam_update, AdamConfig, AdamState, Tape, Tensor};
use crate::rng::{splitmix64, Rng};
use crate::terrasim::{
    make_env, rollout, EnvInstance, EnvParams, Observation, TrajectoryLabel, TrajectoryRecord,
    DIFFICULTY_GRID, EPISODE_STEPS, OBS_DIM, PRIV_DIM,
};
use crate::trajcodec::{CodecTrainer, TrajCodec};

use super::gae::{compute_gae, normalize_advantages};
use super::nets::ActorCritic;
use super::{PpoConfig, PpoError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-step rollout storage across parallel envs, step-major.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_steps: usize,
    pub n_envs: usize,
    pub obs: Vec<[f64; OBS_DIM]>,
    pub privileged: Vec<[f64; PRIV_DIM]>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<f64>,
    pub bootstrap_values: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.n_steps * self.n_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_reward(&self) -> f64 {
        if self.rewards.is_empty() {
            return 0.0;
        }
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// Pool of parallel env slots; finished episodes are replaced by fresh
/// draws from the current parameters (new terrain, difficulty, robot
/// parameters per episode).
pub struct EnvPool {
    params: EnvParams,
    difficulty_grid: Vec<f64>,
    envs: Vec<EnvInstance>,
    obs: Vec<Observation>,
    privs: Vec<[f64; PRIV_DIM]>,
    reset_rng: Rng,
    seed_counter: u64,
    base_seed: u64,
}

impl EnvPool {
    pub fn new(
        params: EnvParams,
        difficulty_grid: Vec<f64>,
        n_envs: usize,
        base_seed: u64,
    ) -> Result<Self, PpoError> {
        if n_envs == 0 {
            return Err(PpoError::Config("env pool needs at least one env".into()));
        }
        params.validate()?;
        let mut pool = EnvPool {
            params,
            difficulty_grid,
            envs: Vec::with_capacity(n_envs),
            obs: Vec::with_capacity(n_envs),
            privs: Vec::with_capacity(n_envs),
            reset_rng: Rng::seed_from(splitmix64(base_seed ^ 0x5eed_0001)),
            seed_counter: 0,
            base_seed,
        };
        for _ in 0..n_envs {
            let (env, obs, privileged) = pool.fresh_env()?;
            pool.envs.push(env);
            pool.obs.push(obs);
            pool.privs.push(privileged);
        }
        Ok(pool)
    }

    /// Replace the sampling parameters; takes effect at the next resets.
    pub fn set_params(&mut self, params: EnvParams) -> Result<(), PpoError> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    /// Replace the per-episode difficulty sampling grid (empty keeps the
    /// difficulty fixed at the current params value).
    pub fn set_difficulty_grid(&mut self, grid: Vec<f64>) {
        self.difficulty_grid = grid;
    }

    fn fresh_env(&mut self) -> Result<(EnvInstance, Observation, [f64; PRIV_DIM]), PpoError> {
        let mut params = self.params.clone();
        if !self.difficulty_grid.is_empty() {
            params.difficulty = self.difficulty_grid[self.reset_rng.below(self.difficulty_grid.len())];
        }
        self.seed_counter += 1;
        let seed = splitmix64(self.base_seed.wrapping_add(self.seed_counter.wrapping_mul(0x9e37)));
        let mut env = make_env(&params, seed)?;
        let (obs, privileged) = env.reset_observation();
        Ok((env, obs, privileged.values))
    }

    /// Roll every env `steps` steps with the stochastic policy.
    pub fn collect(
        &mut self,
        ac: &ActorCritic,
        steps: usize,
        rng: &mut Rng,
    ) -> Result<RolloutBuffer, PpoError> {
        let n_envs = self.envs.len();
        let mut buf = RolloutBuffer {
            n_steps: steps,
            n_envs,
            obs: Vec::with_capacity(steps * n_envs),
            privileged: Vec::with_capacity(steps * n_envs),
            actions: Vec::with_capacity(steps * n_envs),
            log_probs: Vec::with_capacity(steps * n_envs),
            rewards: Vec::with_capacity(steps * n_envs),
            values: Vec::with_capacity(steps * n_envs),
            dones: Vec::with_capacity(steps * n_envs),
            bootstrap_values: Vec::new(),
        };
        for _ in 0..steps {
            let (actions, log_probs) = ac.act_batch(&self.obs, rng)?;
            let values = ac.value_forward(&self.privs)?;
            for e in 0..n_envs {
                buf.obs.push(self.obs[e].to_array());
                buf.privileged.push(self.privs[e]);
                buf.actions.push(actions[e]);
                buf.log_probs.push(log_probs[e]);
                buf.values.push(values[e]);

                let out = self.envs[e].step(actions[e])?;
                buf.rewards.push(out.reward);
                buf.dones.push(if out.done { 1.0 } else { 0.0 });
                if out.done {
                    let (env, obs, privileged) = self.fresh_env()?;
                    self.envs[e] = env;
                    self.obs[e] = obs;
                    self.privs[e] = privileged;
                } else {
                    self.obs[e] = out.observation;
                    self.privs[e] = out.privileged.values;
                }
            }
        }
        buf.bootstrap_values = ac.value_forward(&self.privs)?;
        Ok(buf)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate PPO update over the whole buffer.
pub fn ppo_update(
    buffer: &RolloutBuffer,
    ac: &mut ActorCritic,
    adam: &mut AdamState,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateStats, PpoError> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(PpoError::Config("ppo_update: empty buffer".into()));
    }
    let (n_steps, n_envs) = (buffer.n_steps, buffer.n_envs);

    // GAE per env column
    let mut advantages = vec![0.0; buffer.len()];
    let mut returns = vec![0.0; buffer.len()];
    for e in 0..n_envs {
        let rewards: Vec<f64> = (0..n_steps).map(|s| buffer.rewards[s * n_envs + e]).collect();
        let dones: Vec<f64> = (0..n_steps).map(|s| buffer.dones[s * n_envs + e]).collect();
        let mut values: Vec<f64> =
            (0..n_steps).map(|s| buffer.values[s * n_envs + e]).collect();
        values.push(buffer.bootstrap_values[e]);
        let (adv, ret) = compute_gae(&rewards, &values, &dones, cfg.gamma, cfg.lam)?;
        for s in 0..n_steps {
            advantages[s * n_envs + e] = adv[s];
            returns[s * n_envs + e] = ret[s];
        }
    }
    normalize_advantages(&mut advantages);

    let total = buffer.len();
    let mut stats = UpdateStats {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
    };
    let mut updates = 0usize;
    for _ in 0..cfg.epochs {
        let perm = rng.permutation(total);
        let chunk = total.div_ceil(cfg.minibatches);
        for mb in perm.chunks(chunk) {
            let s = minibatch_step(buffer, &advantages, &returns, mb, ac, adam, cfg)?;
            stats.policy_loss += s.policy_loss;
            stats.value_loss += s.value_loss;
            stats.entropy += s.entropy;
            stats.clip_fraction += s.clip_fraction;
            updates += 1;
        }
    }
    let inv = 1.0 / updates.max(1) as f64;
    stats.policy_loss *= inv;
    stats.value_loss *= inv;
    stats.entropy *= inv;
    stats.clip_fraction *= inv;
    if !(stats.policy_loss.is_finite() && stats.value_loss.is_finite()) {
        return Err(PpoError::Diverged(format!("non-finite losses: {stats:?}")));
    }
    Ok(stats)
}

/// One minibatch of flattened training data.
pub struct MinibatchData {
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub privileged: Vec<f64>,
    pub len: usize,
}

impl MinibatchData {
    fn gather(buffer: &RolloutBuffer, advantages: &[f64], returns: &[f64], indices: &[usize]) -> Self {
        MinibatchData {
            obs: indices.iter().flat_map(|&i| buffer.obs[i]).collect(),
            actions: indices.iter().map(|&i| buffer.actions[i]).collect(),
            old_log_probs: indices.iter().map(|&i| buffer.log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| advantages[i]).collect(),
            returns: indices.iter().map(|&i| returns[i]).collect(),
            privileged: indices.iter().flat_map(|&i| buffer.privileged[i]).collect(),
            len: indices.len(),
        }
    }
}

pub struct PpoLossVars {
    pub total: crate::numgrad::Var,
    pub policy_loss: crate::numgrad::Var,
    pub value_loss: crate::numgrad::Var,
    pub entropy: crate::numgrad::Var,
    pub ratio: crate::numgrad::Var,
}

/// Clipped-surrogate loss graph for one minibatch (shared by the update
/// and the finite-difference checks).
pub fn ppo_loss_graph(
    ac: &ActorCritic,
    tape: &mut Tape,
    bound: &crate::numgrad::BoundParams,
    data: &MinibatchData,
    cfg: &PpoConfig,
) -> Result<PpoLossVars, crate::numgrad::NumError> {
    let b = data.len;
    let obs = tape.constant(Tensor::new(vec![b, OBS_DIM], data.obs.clone())?);
    let (mean, log_std) = ac.policy_graph(tape, bound, obs)?;
    let log_std_b = tape.broadcast_row(log_std, b)?;

    let actions = tape.constant(Tensor::new(vec![b, 1], data.actions.clone())?);
    let diff = tape.sub(actions, mean)?;
    let neg_log_std = tape.scale(log_std_b, -1.0)?;
    let inv_sigma = tape.exp(neg_log_std)?;
    let zscore = tape.mul(diff, inv_sigma)?;
    let zz = tape.mul(zscore, zscore)?;
    let half_zz = tape.scale(zz, -0.5)?;
    let centered = tape.add(half_zz, neg_log_std)?;
    let per_dim = tape.add_scalar(centered, -0.5 * LN_2PI)?;
    let log_prob = tape.row_sums(per_dim)?;

    let old_lp = tape.constant(Tensor::vector(data.old_log_probs.clone()));
    let log_ratio = tape.sub(log_prob, old_lp)?;
    let ratio = tape.exp(log_ratio)?;

    let adv_c = tape.constant(Tensor::vector(data.advantages.clone()));
    let surr1 = tape.mul(ratio, adv_c)?;
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)?;
    let surr2 = tape.mul(clipped, adv_c)?;
    let surr = tape.min(surr1, surr2)?;
    let surr_sum = tape.sum(surr)?;
    let policy_loss = tape.scale(surr_sum, -1.0 / b as f64)?;

    let privileged = tape.constant(Tensor::new(vec![b, PRIV_DIM], data.privileged.clone())?);
    let values = ac.value_graph(tape, bound, privileged)?;
    let ret_c = tape.constant(Tensor::new(vec![b, 1], data.returns.clone())?);
    let verr = tape.sub(values, ret_c)?;
    let verr2 = tape.mul(verr, verr)?;
    let verr_sum = tape.sum(verr2)?;
    let value_loss = tape.scale(verr_sum, 0.5 / b as f64)?;

    // Gaussian entropy: log sigma + (1 + ln 2 pi) / 2 per action dim
    let ent_base = tape.sum(log_std)?;
    let entropy = tape.add_scalar(ent_base, 0.5 * (1.0 + LN_2PI))?;

    let weighted_v = tape.scale(value_loss, cfg.value_coef)?;
    let weighted_ent = tape.scale(entropy, -cfg.entropy_coef)?;
    let partial = tape.add(policy_loss, weighted_v)?;
    let total = tape.add(partial, weighted_ent)?;
    Ok(PpoLossVars {
        total,
        policy_loss,
        value_loss,
        entropy,
        ratio,
    })
}

fn minibatch_step(
    buffer: &RolloutBuffer,
    advantages: &[f64],
    returns: &[f64],
    indices: &[usize],
    ac: &mut ActorCritic,
    adam: &mut AdamState,
    cfg: &PpoConfig,
) -> Result<UpdateStats, PpoError> {
    let data = MinibatchData::gather(buffer, advantages, returns, indices);
    let mut tape = Tape::new();
    let bound = tape.bind(&ac.params);
    let vars = ppo_loss_graph(ac, &mut tape, &bound, &data, cfg)?;

    let clip_fraction = tape
        .value(vars.ratio)
        .values()
        .iter()
        .filter(|r| (*r - 1.0).abs() > cfg.clip)
        .count() as f64
        / data.len as f64;
    let out = UpdateStats {
        policy_loss: tape.value(vars.policy_loss).item(),
        value_loss: tape.value(vars.value_loss).item(),
        entropy: tape.value(vars.entropy).item(),
        clip_fraction,
    };

    let grads = tape.backward(vars.total)?;
    let grads = tape.param_grads(&grads, &ac.params);
    adam_update(&mut ac.params, &grads, adam)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub encoder_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub iterations: usize,
    /// Co-scheduled encoder updates start strictly after this iteration.
    pub encoder_start: usize,
    pub envs: usize,
    pub steps_per_iteration: usize,
    /// Checkpoints to sample trajectories from (evenly spaced).
    pub checkpoints: usize,
    pub trajectories_per_checkpoint: usize,
    pub env_params: EnvParams,
    pub difficulty_grid: Vec<f64>,
    pub ppo: PpoConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 150,
            encoder_start: 150,
            envs: 64,
            steps_per_iteration: 24,
            checkpoints: 10,
            trajectories_per_checkpoint: 200,
            env_params: EnvParams::uniform(0.6, crate::terrasim::DrRange::from_array([0.3, 0.4, 0.1, 0.25])),
            difficulty_grid: DIFFICULTY_GRID.to_vec(),
            ppo: PpoConfig::default(),
            seed: 0,
        }
    }
}

pub struct PretrainResult {
    pub actor_critic: ActorCritic,
    pub dataset: Vec<TrajectoryRecord>,
    pub metrics: Vec<IterationMetrics>,
    /// Iterations at which a co-scheduled encoder update ran.
    pub encoder_updates: Vec<usize>,
    pub train_env_steps: usize,
    /// Set when training aborted on divergence (params roll back to the
    /// last finite iteration).
    pub diverged_at: Option<usize>,
}

/// PPO pretraining under domain randomization. Labeled full episodes are
/// collected at evenly spaced policy checkpoints into the returned
/// dataset; when a codec and trainer are supplied, one encoder update is
/// co-scheduled per iteration past `encoder_start`.
pub fn pretrain(
    cfg: &PretrainConfig,
    mut codec: Option<(&mut TrajCodec, &mut CodecTrainer)>,
) -> Result<PretrainResult, PpoError> {
    cfg.ppo.validate()?;
    if cfg.iterations == 0 || cfg.envs == 0 || cfg.steps_per_iteration == 0 {
        return Err(PpoError::Config("iterations, envs, steps must be positive".into()));
    }
    let mut ac = ActorCritic::init(splitmix64(cfg.seed ^ 0xac0))
        .map_err(PpoError::Num)?;
    let mut adam = AdamState::new(&ac.params, AdamConfig::with_lr(cfg.ppo.lr));
    let mut pool = EnvPool::new(
        cfg.env_params.clone(),
        cfg.difficulty_grid.clone(),
        cfg.envs,
        splitmix64(cfg.seed ^ 0xe41),
    )?;
    let mut rollout_rng = Rng::seed_from(splitmix64(cfg.seed ^ 0x011));
    let mut update_rng = Rng::seed_from(splitmix64(cfg.seed ^ 0x022));
    let mut collect_rng = Rng::seed_from(splitmix64(cfg.seed ^ 0x033));
    let mut codec_rng = Rng::seed_from(splitmix64(cfg.seed ^ 0x044));

    let ckpt_interval = cfg.iterations.div_ceil(cfg.checkpoints).max(1);
    let mut dataset: Vec<TrajectoryRecord> = Vec::new();
    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut encoder_updates = Vec::new();
    let mut train_env_steps = 0usize;
    let mut last_good = ac.params.clone();

    for iteration in 1..=cfg.iterations {
        let buffer = pool.collect(&ac, cfg.steps_per_iteration, &mut rollout_rng)?;
        train_env_steps += buffer.len();
        let mean_reward = buffer.mean_reward();
        if !mean_reward.is_finite() {
            ac.params = last_good;
            return Ok(PretrainResult {
                actor_critic: ac,
                dataset,
                metrics,
                encoder_updates,
                train_env_steps,
                diverged_at: Some(iteration),
            });
        }

        let stats = match ppo_update(&buffer, &mut ac, &mut adam, &cfg.ppo, &mut update_rng) {
            Ok(s) => s,
            Err(PpoError::Diverged(_)) => {
                ac.params = last_good;
                return Ok(PretrainResult {
                    actor_critic: ac,
                    dataset,
                    metrics,
                    encoder_updates,
                    train_env_steps,
                    diverged_at: Some(iteration),
                });
            }
            Err(other) => return Err(other),
        };
        last_good = ac.params.clone();

        // rollout-and-store: sample labeled full episodes at checkpoints
        if iteration % ckpt_interval == 0 || iteration == cfg.iterations {
            collect_checkpoint_trajectories(
                &ac,
                cfg,
                iteration as u32,
                &mut collect_rng,
                &mut dataset,
            )?;
        }

        // co-scheduled encoder update (Alg. line: only past encoder_start)
        let mut encoder_loss = None;
        if iteration > cfg.encoder_start {
            if let Some((codec, trainer)) = codec.as_mut() {
                let batch_size = codec.config.batch_size.min(dataset.len());
                if batch_size >= 2 {
                    let batch: Vec<&TrajectoryRecord> = (0..batch_size)
                        .map(|_| &dataset[codec_rng.below(dataset.len())])
                        .collect();
                    let stats = trainer
                        .train_batch(codec, &batch, &mut codec_rng)
                        .map_err(|e| PpoError::Config(format!("encoder update failed: {e}")))?;
                    encoder_loss = Some(stats.total);
                    encoder_updates.push(iteration);
                }
            }
        }

        metrics.push(IterationMetrics {
            iteration,
            mean_reward,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            encoder_loss,
        });
    }

    Ok(PretrainResult {
        actor_critic: ac,
        dataset,
        metrics,
        encoder_updates,
        train_env_steps,
        diverged_at: None,
    })
}

fn collect_checkpoint_trajectories(
    ac: &ActorCritic,
    cfg: &PretrainConfig,
    checkpoint_id: u32,
    rng: &mut Rng,
    dataset: &mut Vec<TrajectoryRecord>,
) -> Result<(), PpoError> {
    for _ in 0..cfg.trajectories_per_checkpoint {
        let mut params = cfg.env_params.clone();
        if !cfg.difficulty_grid.is_empty() {
            params.difficulty = cfg.difficulty_grid[rng.below(cfg.difficulty_grid.len())];
        }
        let env_seed = rng.next_u64();
        let mut env = make_env(&params, env_seed)?;
        let label = TrajectoryLabel {
            terrain: env.terrain,
            difficulty: env.difficulty,
            robot_params: env.robot,
            checkpoint_id,
        };
        let mut action_rng = rng.derive(env_seed);
        let (record, _) = rollout(
            &mut env,
            |obs| {
                let (mean, log_std) = ac
                    .policy_forward(std::slice::from_ref(obs))
                    .expect("policy forward");
                mean[0] + log_std.exp() * action_rng.normal()
            },
            EPISODE_STEPS,
            Some(label),
        )?;
        dataset.push(record);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mean_step_reward: f64,
    pub mean_velocity: f64,
    pub mean_distance: f64,
    pub episodes: usize,
}

/// Deterministic evaluation: mean action, one env per seed, per-step
/// averaging of rewards.
pub fn evaluate(
    ac: &ActorCritic,
    env_params: &EnvParams,
    seeds: &[u64],
) -> Result<EvalMetrics, PpoError> {
    if seeds.is_empty() {
        return Err(PpoError::Config("evaluate: need at least one episode".into()));
    }
    let mut reward_sum = 0.0;
    let mut velocity_sum = 0.0;
    let mut steps = 0usize;
    let mut distance_sum = 0.0;
    for &seed in seeds {
        let mut env = make_env(env_params, seed)?;
        let (mut obs, _) = env.reset_observation();
        loop {
            let action = ac.act_mean(&obs)?;
            let out = env.step(action)?;
            reward_sum += out.reward;
            velocity_sum += out.state.velocity;
            steps += 1;
            obs = out.observation;
            if out.done {
                break;
            }
        }
        distance_sum += env.state().position;
    }
    Ok(EvalMetrics {
        mean_step_reward: reward_sum / steps as f64,
        mean_velocity: velocity_sum / steps as f64,
        mean_distance: distance_sum / seeds.len() as f64,
        episodes: seeds.len(),
    })
}
