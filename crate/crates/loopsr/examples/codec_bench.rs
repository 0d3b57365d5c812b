//! Times one codec training batch on full-length trajectories.
//!
//!     cargo run --release --example codec_bench

use loopsr::ppo::{pretrain, PpoConfig, PretrainConfig};
use loopsr::rng::Rng;
use loopsr::terrasim::{DrRange, EnvParams, TrajectoryRecord, EPISODE_STEPS};
use loopsr::trajcodec::{CodecTrainer, EncoderConfig, TrajCodec};

fn main() {
    let cfg = PretrainConfig {
        iterations: 5,
        encoder_start: 5,
        envs: 8,
        steps_per_iteration: 8,
        checkpoints: 5,
        trajectories_per_checkpoint: 16,
        env_params: EnvParams::uniform(0.6, DrRange::from_array([0.3, 0.4, 0.1, 0.25])),
        difficulty_grid: vec![0.3, 0.6, 0.9],
        ppo: PpoConfig::default(),
        seed: 3,
    };
    let result = pretrain(&cfg, None).expect("pretrain");
    let records = result.dataset;
    println!(
        "dataset: {} trajectories of {} steps",
        records.len(),
        EPISODE_STEPS
    );

    let mut codec = TrajCodec::init(EncoderConfig::default(), 1).expect("init");
    let mut trainer = CodecTrainer::new(&codec, [0.3, 0.4, 0.1, 0.25]);
    let mut rng = Rng::seed_from(9);

    let batch: Vec<&TrajectoryRecord> = records.iter().take(32).collect();
    for round in 0..3 {
        let t0 = std::time::Instant::now();
        let stats = trainer.train_batch(&mut codec, &batch, &mut rng).expect("batch");
        println!(
            "batch {}: {:.2}s  total {:.4} recon {:.4} con {:.4} e {:.4} r {:.4}",
            round,
            t0.elapsed().as_secs_f64(),
            stats.total,
            stats.recon,
            stats.contrastive,
            stats.terrain,
            stats.robot
        );
    }

    let t0 = std::time::Instant::now();
    let z = codec.encode_mean(&records[0]).expect("encode");
    println!(
        "inference encode: {:.0} ms, |z| = {:.9}",
        1000.0 * t0.elapsed().as_secs_f64(),
        z.iter().map(|v| v * v).sum::<f64>().sqrt()
    );
}
