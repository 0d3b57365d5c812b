//! Adaptation-loop boundary tests: label hygiene, schedule contracts, and
//! determinism, on deliberately tiny components.

use loopsr::latentstore::build_reference;
use loopsr::loopctl::{
    adaptation_loop, DeploymentEnv, LoopConfig, LoopError, SimDeployment,
};
use loopsr::ppo::{PpoConfig, PretrainConfig};
use loopsr::terrasim::{DrRange, EnvParams, Observation, TerrainType, TrajectoryLabel, TrajectoryRecord};
use loopsr::trajcodec::{train_encoder, EncoderConfig, TrajCodec};

const DR: [f64; 4] = [0.3, 0.4, 0.1, 0.25];

struct Setup {
    policy: loopsr::ppo::ActorCritic,
    codec: TrajCodec,
    store: loopsr::latentstore::ReferenceStore,
}

fn tiny_setup() -> Setup {
    let cfg = PretrainConfig {
        iterations: 2,
        encoder_start: 2,
        envs: 4,
        steps_per_iteration: 8,
        checkpoints: 2,
        trajectories_per_checkpoint: 6,
        env_params: EnvParams::uniform(0.6, DrRange::from_array(DR)),
        difficulty_grid: vec![0.3, 0.6, 0.9],
        ppo: PpoConfig::default(),
        seed: 3,
    };
    let pre = loopsr::ppo::pretrain(&cfg, None).unwrap();
    let codec_cfg = EncoderConfig {
        d_model: 16,
        layers: 1,
        heads: 2,
        max_timesteps: 200,
        batch_size: 4,
        epochs: 1,
        ..EncoderConfig::default()
    };
    let mut codec = TrajCodec::init(codec_cfg, 5).unwrap();
    train_encoder(&mut codec, &pre.dataset, DR, 7).unwrap();
    let store = build_reference(&pre.dataset, &codec).unwrap();
    Setup {
        policy: pre.actor_critic,
        codec,
        store,
    }
}

fn tiny_loop_config(loops: usize) -> LoopConfig {
    LoopConfig {
        loops,
        trajectories_per_batch: 2,
        iterations_per_episode: 2,
        episodes_per_redeploy: 2,
        envs: 4,
        steps_per_iteration: 8,
        eval_episodes: 2,
        dr_range: DrRange::from_array(DR),
        ..LoopConfig::default()
    }
}

/// Deployment that leaks garbage privileged labels on every record; the
/// loop must produce results identical to the clean deployment.
struct PoisonedDeployment {
    inner: SimDeployment,
}

impl DeploymentEnv for PoisonedDeployment {
    fn collect_episode(
        &mut self,
        policy: &mut dyn FnMut(&Observation) -> f64,
    ) -> Result<TrajectoryRecord, LoopError> {
        let mut record = self.inner.collect_episode(policy)?;
        record.label = Some(TrajectoryLabel {
            terrain: TerrainType::Flat, // wrong on purpose
            difficulty: 0.3,
            robot_params: loopsr::terrasim::RobotParams::midpoint(),
            checkpoint_id: 0xdead,
        });
        Ok(record)
    }
}

#[test]
fn poisoned_labels_do_not_affect_results() {
    let setup = tiny_setup();
    let cfg = tiny_loop_config(2);
    let test_params = EnvParams::one_hot(TerrainType::Stairs, 0.9);

    let run = |poisoned: bool| {
        let inner = SimDeployment::new(test_params.clone(), 77).unwrap();
        let metrics = if poisoned {
            let mut deployment = PoisonedDeployment { inner };
            adaptation_loop(
                &cfg,
                &setup.policy,
                &setup.codec,
                &setup.store,
                &mut deployment,
                Some(&test_params),
                13,
            )
            .unwrap()
            .metrics
        } else {
            let mut deployment = inner;
            adaptation_loop(
                &cfg,
                &setup.policy,
                &setup.codec,
                &setup.store,
                &mut deployment,
                Some(&test_params),
                13,
            )
            .unwrap()
            .metrics
        };
        serde_json::to_string(&metrics).unwrap()
    };
    assert_eq!(run(false), run(true), "poisoned labels changed loop results");
}

#[test]
fn loop_schedule_is_honored_exactly() {
    let setup = tiny_setup();
    let cfg = tiny_loop_config(4);
    let test_params = EnvParams::one_hot(TerrainType::Rough, 0.6);
    let mut deployment = SimDeployment::new(test_params.clone(), 5).unwrap();
    let result = adaptation_loop(
        &cfg,
        &setup.policy,
        &setup.codec,
        &setup.store,
        &mut deployment,
        None,
        17,
    )
    .unwrap();
    assert_eq!(result.metrics.len(), 4);
    for (i, m) in result.metrics.iter().enumerate() {
        assert_eq!(m.loop_index, i + 1);
        // redeploy every 2 episodes
        assert_eq!(m.redeployed, (i + 1) % cfg.episodes_per_redeploy == 0);
        // the current terrain distribution stays a simplex throughout
        let sum: f64 = m.current_terrain.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(m.current_terrain.iter().all(|p| *p >= 0.0));
        // identified robot parameters stay in the global ranges
        for (v, (lo, hi)) in m
            .current_robot
            .iter()
            .zip(loopsr::terrasim::ROBOT_PARAM_RANGES.iter())
        {
            assert!(v >= lo && v <= hi);
        }
    }
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let setup = tiny_setup();
    let cfg = tiny_loop_config(2);
    let test_params = EnvParams::one_hot(TerrainType::SlopeUp, 0.6);
    let run = || {
        let mut deployment = SimDeployment::new(test_params.clone(), 23).unwrap();
        let result = adaptation_loop(
            &cfg,
            &setup.policy,
            &setup.codec,
            &setup.store,
            &mut deployment,
            Some(&test_params),
            29,
        )
        .unwrap();
        serde_json::to_string(&result.metrics).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn empty_store_is_rejected() {
    let setup = tiny_setup();
    let cfg = tiny_loop_config(1);
    let test_params = EnvParams::one_hot(TerrainType::Flat, 0.3);
    let mut deployment = SimDeployment::new(test_params, 1).unwrap();
    let empty = loopsr::latentstore::ReferenceStore::default();
    let err = adaptation_loop(
        &cfg,
        &setup.policy,
        &setup.codec,
        &empty,
        &mut deployment,
        None,
        1,
    );
    assert!(matches!(err, Err(LoopError::Config(_))));
}
