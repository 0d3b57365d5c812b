//! Small end-to-end adaptation run: pretrain under randomization, train
//! the codec, build the store, then run sim-to-sim loops against a held
//! stairs environment and watch the identified terrain mix converge.
//!
//!     cargo run --release --example adaptation_loop [loops] [iters_per_episode]

use loopsr::latentstore::build_reference;
use loopsr::loopctl::{adaptation_loop, LoopConfig, SimDeployment};
use loopsr::ppo::{evaluate, pretrain, PpoConfig, PretrainConfig};
use loopsr::terrasim::{DrRange, EnvParams, TerrainType};
use loopsr::trajcodec::{train_encoder, EncoderConfig, TrajCodec};

fn main() {
    let arg = |i: usize, default: usize| {
        std::env::args()
            .nth(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or(default)
    };
    let loops = arg(1, 4);
    let iters = arg(2, 50);

    let dr = DrRange::from_array([0.3, 0.4, 0.1, 0.25]);
    let pre_cfg = PretrainConfig {
        iterations: 60,
        encoder_start: 60,
        envs: 64,
        steps_per_iteration: 24,
        checkpoints: 10,
        trajectories_per_checkpoint: 40,
        env_params: EnvParams::uniform(0.6, dr),
        difficulty_grid: vec![0.3, 0.6, 0.9],
        ppo: PpoConfig::default(),
        seed: 5,
    };
    println!("pretraining {} iterations under domain randomization...", pre_cfg.iterations);
    let pre = pretrain(&pre_cfg, None).expect("pretrain");

    println!("training the codec on {} labeled trajectories...", pre.dataset.len());
    let codec_cfg = EncoderConfig {
        epochs: 1,
        ..EncoderConfig::default()
    };
    let mut codec = TrajCodec::init(codec_cfg, 6).expect("codec");
    train_encoder(&mut codec, &pre.dataset, dr.to_array(), 7).expect("train codec");
    let store = build_reference(&pre.dataset, &codec).expect("store");
    println!("reference store: {} entries", store.len());

    // hidden test environment: stairs at the hardest difficulty
    let test_params = EnvParams::one_hot(TerrainType::Stairs, 0.9);
    let origin_eval = evaluate(&pre.actor_critic, &test_params, &[1, 2, 3, 4, 5]).unwrap();
    println!(
        "\nbefore adaptation: mean step reward {:.4} on hidden stairs d=0.9",
        origin_eval.mean_step_reward
    );

    let loop_cfg = LoopConfig {
        loops,
        iterations_per_episode: iters,
        dr_range: dr,
        ..LoopConfig::default()
    };
    let mut deployment = SimDeployment::new(test_params.clone(), 99).expect("deployment");
    let result = adaptation_loop(
        &loop_cfg,
        &pre.actor_critic,
        &codec,
        &store,
        &mut deployment,
        Some(&test_params),
        11,
    )
    .expect("adaptation");

    println!("\nloop  stairs-mass  identified c_r                     eval reward");
    for m in &result.metrics {
        println!(
            "{:>4}  {:>10.3}  [{:.2} {:.2} {:.2} {:.2}]  {:>12.4}",
            m.loop_index,
            m.current_terrain[TerrainType::Stairs.index()],
            m.current_robot[0],
            m.current_robot[1],
            m.current_robot[2],
            m.current_robot[3],
            m.eval.map(|e| e.mean_step_reward).unwrap_or(f64::NAN)
        );
    }
    println!(
        "\nterrain mix shifted toward stairs: {:.3} -> {:.3}",
        0.2,
        result.final_params.terrain_probs[TerrainType::Stairs.index()]
    );
}
