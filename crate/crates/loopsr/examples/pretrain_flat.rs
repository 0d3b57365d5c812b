//! Small PPO pretraining run on flat ground only: prints the learning
//! curve and a final deterministic evaluation.
//!
//!     cargo run --release --example pretrain_flat [iterations]

use loopsr::ppo::{evaluate, pretrain, PpoConfig, PretrainConfig};
use loopsr::terrasim::{EnvParams, TerrainType};

fn main() {
    let iterations: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(400);

    let cfg = PretrainConfig {
        iterations,
        encoder_start: iterations,
        envs: 64,
        steps_per_iteration: 24,
        checkpoints: 10,
        trajectories_per_checkpoint: 5,
        env_params: EnvParams::one_hot(TerrainType::Flat, 0.6),
        difficulty_grid: vec![0.3, 0.6, 0.9],
        ppo: PpoConfig::default(),
        seed: 7,
    };

    let t0 = std::time::Instant::now();
    let result = pretrain(&cfg, None).expect("pretrain");
    let dt = t0.elapsed().as_secs_f64();

    for m in result.metrics.iter().step_by((iterations / 20).max(1)) {
        println!(
            "iter {:4}  reward {:7.4}  policy {:8.5}  value {:8.4}  clip {:5.3}  entropy {:6.3}",
            m.iteration, m.mean_reward, m.policy_loss, m.value_loss, m.clip_fraction, m.entropy
        );
    }
    println!(
        "trained {} iterations in {:.1}s ({:.0} ms/iter), {} env steps",
        iterations,
        dt,
        1000.0 * dt / iterations as f64,
        result.train_env_steps
    );

    let eval = evaluate(
        &result.actor_critic,
        &EnvParams::one_hot(TerrainType::Flat, 0.6),
        &(0..10).collect::<Vec<u64>>(),
    )
    .expect("evaluate");
    println!(
        "flat evaluation: mean step reward {:.4}, mean velocity {:.3}, distance {:.2} m",
        eval.mean_step_reward, eval.mean_velocity, eval.mean_distance
    );
}
