use loopsr::numgrad::{AdamConfig, AdamState};
use loopsr::ppo::{evaluate, ppo_update, pretrain, ActorCritic, EnvPool, PpoConfig, PretrainConfig};
use loopsr::rng::{splitmix64, Rng};
use loopsr::terrasim::{DrRange, EnvParams, TerrainType};

fn continue_training(policy: &ActorCritic, env: &EnvParams, grid: Vec<f64>, iters: usize, seed: u64) -> ActorCritic {
    let cfg = PpoConfig::default();
    let mut t = policy.clone();
    let mut adam = AdamState::new(&t.params, AdamConfig::with_lr(cfg.lr));
    let mut pool = EnvPool::new(env.clone(), grid, 64, splitmix64(seed)).unwrap();
    let mut rr = Rng::seed_from(splitmix64(seed ^ 1));
    let mut ur = Rng::seed_from(splitmix64(seed ^ 2));
    for i in 0..iters {
        let buf = pool.collect(&t, 24, &mut rr).unwrap();
        ppo_update(&buf, &mut t, &mut adam, &cfg, &mut ur).unwrap();
        if i % 400 == 0 { eprintln!("  iter {i}: reward {:.3}", buf.mean_reward()); }
    }
    t
}

fn main() {
    let dr = DrRange::from_array([0.3, 0.4, 0.1, 0.25]);
    let pre_cfg = PretrainConfig {
        iterations: 150, encoder_start: 150, envs: 64, steps_per_iteration: 24,
        checkpoints: 10, trajectories_per_checkpoint: 1,
        env_params: EnvParams::uniform(0.6, dr),
        difficulty_grid: vec![0.3, 0.6, 0.9],
        ppo: PpoConfig::default(), seed: 20240901,
    };
    let t0 = std::time::Instant::now();
    let pre = pretrain(&pre_cfg, None).unwrap();
    eprintln!("pretrain 150 iters: {:.0}s, final reward {:.3}", t0.elapsed().as_secs_f64(), pre.metrics.last().unwrap().mean_reward);

    let mut test = EnvParams::one_hot(TerrainType::Stairs, 0.9);
    // a specific robot away from nominal: heavy, draggy, weak-ish motor,
    // hard impacts
    test.robot_params = loopsr::terrasim::RobotParams {
        mass: 1.30,
        friction: 0.90,
        motor_strength: 0.90,
        restitution: 0.00,
    };
    let eval_seeds: Vec<u64> = (0..10).map(|e| splitmix64(0xe7a1 ^ e)).collect();
    let pre_eval = evaluate(&pre.actor_critic, &test, &eval_seeds).unwrap();
    eprintln!("pretrained on stairs d0.9: {:.4}", pre_eval.mean_step_reward);

    // origin: continue under wide DR
    let t1 = std::time::Instant::now();
    let origin = continue_training(&pre.actor_critic, &EnvParams::uniform(0.6, dr), vec![0.3,0.6,0.9], 2000, 77);
    let origin_eval = evaluate(&origin, &test, &eval_seeds).unwrap();
    eprintln!("origin (+2000 wide DR): {:.4} [{:.0}s]", origin_eval.mean_step_reward, t1.elapsed().as_secs_f64());

    // oracle-adapted: continue on stairs-focused env with narrowed DR around truth
    let mut oracle_env = test.clone();
    oracle_env.dr_range = dr.halved();
    let t2 = std::time::Instant::now();
    let oracle = continue_training(&pre.actor_critic, &oracle_env, vec![0.9], 2000, 78);
    let oracle_eval = evaluate(&oracle, &test, &eval_seeds).unwrap();
    eprintln!("oracle-adapted (+2000 stairs, R/2): {:.4} [{:.0}s]", oracle_eval.mean_step_reward, t2.elapsed().as_secs_f64());

    // expert: fresh policy purely on the test env
    let fresh = ActorCritic::init(splitmix64(0xf00d)).unwrap();
    let t3 = std::time::Instant::now();
    let expert = continue_training(&fresh, &test, vec![0.9], 2150, 79);
    let expert_eval = evaluate(&expert, &test, &eval_seeds).unwrap();
    eprintln!("expert (2150 on target): {:.4} [{:.0}s]", expert_eval.mean_step_reward, t3.elapsed().as_secs_f64());

    eprintln!("\nratios: oracle/origin {:.3}, expert/oracle {:.3}",
        oracle_eval.mean_step_reward / origin_eval.mean_step_reward,
        expert_eval.mean_step_reward / oracle_eval.mean_step_reward);
}
