use loopsr::terrasim::{make_env, EnvParams, RobotParams, TerrainType, EPISODE_STEPS};

fn mean_reward(params: &EnvParams, policy: impl Fn(f64, f64) -> f64) -> f64 {
    // policy(v_obs, contact) -> u; average over 8 seeds
    let mut total = 0.0;
    for seed in 0..8 {
        let mut env = make_env(params, seed).unwrap();
        let (mut obs, _) = env.reset_observation();
        let mut acc = 0.0;
        for _ in 0..EPISODE_STEPS {
            let u = policy(obs.velocity, obs.contact_flag);
            let out = env.step(u).unwrap();
            acc += out.reward;
            obs = out.observation;
        }
        total += acc / EPISODE_STEPS as f64;
    }
    total / 8.0
}

fn main() {
    for (mass, friction, motor, rest) in [
        (1.25, 0.95, 0.92, 0.05),
        (1.30, 0.60, 0.92, 0.00),
        (1.30, 0.90, 0.90, 0.00),
        (1.20, 0.40, 0.95, 0.00),
        (1.00, 0.60, 1.00, 0.25), // midpoint reference
    ] {
        let mut p = EnvParams::one_hot(TerrainType::Stairs, 0.9);
        p.robot_params = RobotParams { mass, friction, motor_strength: motor, restitution: rest };

        // generalist proxy: track v = 1 with a feedback gain
        let track = mean_reward(&p, |v, _| (0.8 * (1.0 - v)).clamp(-1.0, 1.0));

        // specialist proxy: best (target, burst) reactive policy
        let mut best = (0.0, 0.0, 0.0);
        for target10 in 4..=12 {
            let target = target10 as f64 * 0.1;
            for burst10 in 0..=10 {
                let burst = burst10 as f64 * 0.1;
                let r = mean_reward(&p, |v, c| {
                    ((1.2 * (target - v)).clamp(-1.0, 1.0) + burst * c).clamp(-1.0, 1.0)
                });
                if r > best.0 { best = (r, target, burst); }
            }
        }
        println!(
            "m {mass} mu {friction} km {motor} er {rest}: track1.0 {track:.4}, specialist {:.4} (target {:.1}, burst {:.1}) -> gap {:+.1}%",
            best.0, best.1, best.2, 100.0 * (best.0 / track - 1.0)
        );
    }
}
