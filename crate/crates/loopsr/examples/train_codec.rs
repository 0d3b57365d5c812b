//! Trains the trajectory codec on labeled pretraining rollouts and reports
//! held-out terrain identification (kNN over the reference store) plus
//! robot-parameter identification error.
//!
//!     cargo run --release --example train_codec [train_count] [held_out] [epochs]

use loopsr::latentstore::{build_reference, fuse, ParamsEstimate};
use loopsr::ppo::{pretrain, PpoConfig, PretrainConfig};
use loopsr::terrasim::{DrRange, EnvParams, TerrainType, TrajectoryRecord, ROBOT_PARAM_RANGES};
use loopsr::trajcodec::{train_encoder, EncoderConfig, TrajCodec};

fn main() {
    let arg = |i: usize, default: usize| {
        std::env::args()
            .nth(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or(default)
    };
    let train_count = arg(1, 600);
    let held_out = arg(2, 150);
    let epochs = arg(3, 2);

    let dr = DrRange::from_array([0.3, 0.4, 0.1, 0.25]);
    let total = train_count + held_out;
    let per_checkpoint = total.div_ceil(10);
    let cfg = PretrainConfig {
        iterations: 60,
        encoder_start: 60,
        envs: 64,
        steps_per_iteration: 24,
        checkpoints: 10,
        trajectories_per_checkpoint: per_checkpoint,
        env_params: EnvParams::uniform(0.6, dr),
        difficulty_grid: vec![0.3, 0.6, 0.9],
        ppo: PpoConfig::default(),
        seed: 17,
    };
    let t0 = std::time::Instant::now();
    let result = pretrain(&cfg, None).expect("pretrain");
    println!(
        "pretrain + collection: {:.1}s, {} trajectories, final reward {:.3}",
        t0.elapsed().as_secs_f64(),
        result.dataset.len(),
        result.metrics.last().unwrap().mean_reward
    );

    // interleaved split keeps every checkpoint in both halves
    let mut train: Vec<TrajectoryRecord> = Vec::new();
    let mut held: Vec<TrajectoryRecord> = Vec::new();
    for (i, rec) in result.dataset.into_iter().enumerate() {
        if i % (total / held_out.max(1)).max(2) == 1 && held.len() < held_out {
            held.push(rec);
        } else if train.len() < train_count {
            train.push(rec);
        }
    }
    println!("train {} / held out {}", train.len(), held.len());

    let lr: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-3);
    let lambda_recon: f64 = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.02);
    let d_model: usize = std::env::args()
        .nth(6)
        .and_then(|s| s.parse().ok())
        .unwrap_or(32);
    let layers: usize = std::env::args()
        .nth(7)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let batch_size: usize = std::env::args()
        .nth(8)
        .and_then(|s| s.parse().ok())
        .unwrap_or(12);
    let config = EncoderConfig {
        epochs,
        lr,
        lambda_recon,
        lambda_con: 1.0,
        lambda_r: 2.0,
        d_model,
        layers,
        batch_size,
        ..EncoderConfig::default()
    };
    let mut codec = TrajCodec::init(config, 23).expect("codec init");
    let t0 = std::time::Instant::now();
    let stats = train_encoder(&mut codec, &train, dr.to_array(), 29).expect("train");
    for s in &stats {
        println!(
            "epoch {}: total {:.2} recon {:.2} con {:.4} terrain {:.4} robot {:.4}",
            s.epoch, s.total, s.recon, s.contrastive, s.terrain, s.robot
        );
    }
    println!("codec training: {:.1}s", t0.elapsed().as_secs_f64());

    let t0 = std::time::Instant::now();
    let store = build_reference(&train, &codec).expect("store");
    println!("reference store: {} entries in {:.1}s", store.len(), t0.elapsed().as_secs_f64());

    // held-out identification: kNN terrain route plus all three robot-
    // parameter routes (retrieved, decoded, fused)
    let mut terrain_hits = [0usize; 5];
    let mut terrain_counts = [0usize; 5];
    let mut rough_by_difficulty = [[0usize; 2]; 3];
    let mut err_retrieved = [0.0f64; 4];
    let mut err_decoded = [0.0f64; 4];
    let mut err_fused = [0.0f64; 4];
    for rec in &held {
        let label = rec.label.unwrap();
        let z = codec.encode_mean(rec).expect("encode");
        let retrieved = store.knn_retrieve(&z, 16).expect("knn");
        let (p_e, p_r) = codec.decode_params(&z).expect("decode");
        let decoded = ParamsEstimate {
            terrain_probs: p_e,
            robot_params: p_r,
        };
        let fused = fuse(&retrieved.estimate, &decoded, 0.8).expect("fuse");

        let pred = retrieved
            .estimate
            .terrain_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        terrain_counts[label.terrain.index()] += 1;
        let hit = pred == label.terrain.index();
        if hit {
            terrain_hits[label.terrain.index()] += 1;
        }
        if label.terrain == TerrainType::Rough {
            let d_idx = ((label.difficulty / 0.3).round() as usize).saturating_sub(1).min(2);
            rough_by_difficulty[d_idx][1] += 1;
            if hit {
                rough_by_difficulty[d_idx][0] += 1;
            }
        }
        let truth = label.robot_params.to_array();
        for k in 0..4 {
            let r = dr.to_array()[k];
            err_retrieved[k] += (retrieved.estimate.robot_params[k] - truth[k]).abs() / r;
            err_decoded[k] += (decoded.robot_params[k] - truth[k]).abs() / r;
            err_fused[k] += (fused.estimate.robot_params[k] - truth[k]).abs() / r;
        }
    }
    println!("identification: {:.1}s", t0.elapsed().as_secs_f64());

    let total_hits: usize = terrain_hits.iter().sum();
    let total_count: usize = terrain_counts.iter().sum();
    println!(
        "\noverall kNN terrain accuracy: {:.1}% ({}/{})",
        100.0 * total_hits as f64 / total_count as f64,
        total_hits,
        total_count
    );
    for t in TerrainType::ALL {
        let i = t.index();
        if terrain_counts[i] > 0 {
            println!(
                "  {:>10}: {:5.1}% ({}/{})",
                t.name(),
                100.0 * terrain_hits[i] as f64 / terrain_counts[i] as f64,
                terrain_hits[i],
                terrain_counts[i]
            );
        }
    }
    println!(
        "  rough by difficulty 0.3/0.6/0.9: {:?}",
        rough_by_difficulty
    );
    println!("\nnormalized robot-parameter error (retrieved | decoded | fused):");
    for (k, name) in ["mass", "friction", "motor", "restitution"].iter().enumerate() {
        let n = held.len() as f64;
        println!(
            "  {:>12}: {:.3} | {:.3} | {:.3}",
            name,
            err_retrieved[k] / n,
            err_decoded[k] / n,
            err_fused[k] / n
        );
    }
    let _ = ROBOT_PARAM_RANGES;
}
