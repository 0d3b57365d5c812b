use super::*;
use crate::numgrad::check::grad_check;
use crate::rng::Rng;
use crate::terrasim::{make_env, rollout, EnvParams, RobotParams, TrajectoryLabel};

fn tiny_config(max_t: usize) -> EncoderConfig {
    EncoderConfig {
        d_model: 16,
        layers: 1,
        heads: 2,
        max_timesteps: max_t,
        batch_size: 4,
        epochs: 5,
        ..EncoderConfig::default()
    }
}

fn sample_record(terrain: TerrainType, steps: usize, seed: u64) -> TrajectoryRecord {
    let mut env = make_env(&EnvParams::one_hot(terrain, 0.6), seed).unwrap();
    let label = TrajectoryLabel {
        terrain,
        difficulty: 0.6,
        robot_params: env.robot,
        checkpoint_id: 0,
    };
    let (rec, _) = rollout(&mut env, |o| 0.5 - 0.2 * o.velocity, steps, Some(label)).unwrap();
    rec
}

const TEST_DR: [f64; 4] = [0.3, 0.4, 0.1, 0.25];

#[test]
fn tokenize_emits_three_tokens_per_timestep() {
    let codec = TrajCodec::init(tiny_config(200), 1).unwrap();
    for (steps, want) in [(1usize, 3usize), (7, 21), (200, 600)] {
        let rec = sample_record(TerrainType::Flat, steps, 2);
        let mut tape = Tape::new();
        let bound = tape.bind(&codec.params);
        let tokens = codec.tokenize(&mut tape, &bound, &rec).unwrap();
        assert_eq!(tape.value(tokens).shape(), &[want, 16]);
    }
}

#[test]
fn tokenize_rejects_empty_and_overlong() {
    let codec = TrajCodec::init(tiny_config(10), 1).unwrap();
    let empty = TrajectoryRecord {
        obs: vec![],
        actions: vec![],
        next_obs: vec![],
        label: None,
    };
    let mut tape = Tape::new();
    let bound = tape.bind(&codec.params);
    assert!(codec.tokenize(&mut tape, &bound, &empty).is_err());
    let long = sample_record(TerrainType::Flat, 11, 3);
    assert!(codec.tokenize(&mut tape, &bound, &long).is_err());
}

#[test]
fn timestep_permutation_changes_tokens() {
    let codec = TrajCodec::init(tiny_config(20), 4).unwrap();
    let rec = sample_record(TerrainType::Rough, 6, 5);
    let mut swapped = rec.clone();
    swapped.obs.swap(1, 4);
    swapped.actions.swap(1, 4);
    swapped.next_obs.swap(1, 4);

    let tokens = |r: &TrajectoryRecord| {
        let mut tape = Tape::new();
        let bound = tape.bind(&codec.params);
        let t = codec.tokenize(&mut tape, &bound, r).unwrap();
        tape.value(t).clone()
    };
    assert_ne!(tokens(&rec).values(), tokens(&swapped).values());
}

#[test]
fn encode_emits_unit_norm_32d_latent() {
    let codec = TrajCodec::init(EncoderConfig::default(), 6).unwrap();
    let rec = sample_record(TerrainType::Stairs, 25, 7);
    let latent = codec.encode(&rec, EncodeMode::Inference).unwrap();
    assert_eq!(latent.z.len(), 32);
    let norm: f64 = latent.z.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-9);
    for ls in latent.log_sigma {
        assert!((-10.0..=2.0).contains(&ls));
    }
    // determinism in inference mode
    let again = codec.encode_mean(&rec).unwrap();
    assert_eq!(latent.z, again);
}

#[test]
fn encode_ignores_labels() {
    let codec = TrajCodec::init(tiny_config(30), 8).unwrap();
    let mut rec = sample_record(TerrainType::SlopeUp, 12, 9);
    let with_label = codec.encode_mean(&rec).unwrap();
    rec.label = None;
    let without = codec.encode_mean(&rec).unwrap();
    assert_eq!(with_label, without);
}

#[test]
fn sampled_latent_stays_on_sphere() {
    let codec = TrajCodec::init(tiny_config(30), 10).unwrap();
    let rec = sample_record(TerrainType::Flat, 10, 11);
    let mut rng = Rng::seed_from(12);
    for _ in 0..5 {
        let mut noise = [0.0; LATENT_DIM];
        noise.iter_mut().for_each(|v| *v = rng.normal());
        let latent = codec.encode(&rec, EncodeMode::Sample { noise: &noise }).unwrap();
        let norm: f64 = latent.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
}

#[test]
fn prefix_encoding_is_causal() {
    let codec = TrajCodec::init(tiny_config(40), 13).unwrap();
    let rec = sample_record(TerrainType::Rough, 20, 14);
    let prefix = 8;
    let base = codec.encode_prefix_mean(&rec, prefix).unwrap();

    let mut perturbed = rec.clone();
    for t in prefix..perturbed.len() {
        for c in 0..4 {
            perturbed.obs[t][c] += 3.7;
            perturbed.next_obs[t][c] -= 1.1;
        }
        perturbed.actions[t] = -perturbed.actions[t];
    }
    // the o_{t+1} token of step prefix-1 is obs[prefix]; keep it intact
    perturbed.next_obs[prefix - 1] = rec.next_obs[prefix - 1];
    let after = codec.encode_prefix_mean(&perturbed, prefix).unwrap();
    assert_eq!(base, after, "prefix latent changed by suffix perturbation");

    // decoding from the prefix latent at a prefix timestep is unchanged too
    let probe = |z: &[f64; LATENT_DIM]| codec.decode_params(z).unwrap();
    assert_eq!(probe(&base), probe(&after));
}

#[test]
fn zero_decoder_recon_loss_matches_sum_of_squares() {
    let mut codec = TrajCodec::init(tiny_config(30), 15).unwrap();
    // zero every reconstruction-decoder parameter: prediction is 0
    for layer in 0..3 {
        for suffix in ["w", "b"] {
            let name = format!("dec.recon.l{layer}.{suffix}");
            codec
                .params
                .get_mut(&name)
                .unwrap()
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
    let rec = sample_record(TerrainType::SlopeDown, 9, 16);
    let z = codec.encode_mean(&rec).unwrap();
    let mut tape = Tape::new();
    let bound = tape.bind(&codec.params);
    let z_var = tape.constant(crate::numgrad::Tensor::new(vec![1, LATENT_DIM], z.to_vec()).unwrap());
    let loss = codec.recon_loss_graph(&mut tape, &bound, &rec, z_var).unwrap();

    let oracle: f64 = rec
        .next_obs
        .iter()
        .flat_map(|row| row.iter())
        .map(|v| v * v)
        .sum();
    assert!((tape.value(loss).item() - oracle).abs() < 1e-12);
}

#[test]
fn recon_loss_nonnegative() {
    let codec = TrajCodec::init(tiny_config(30), 17).unwrap();
    for seed in 0..5 {
        let rec = sample_record(TerrainType::Stairs, 12, 30 + seed);
        let z = codec.encode_mean(&rec).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&codec.params);
        let z_var =
            tape.constant(crate::numgrad::Tensor::new(vec![1, LATENT_DIM], z.to_vec()).unwrap());
        let loss = codec.recon_loss_graph(&mut tape, &bound, &rec, z_var).unwrap();
        assert!(tape.value(loss).item() >= 0.0);
    }
}

fn unit(vs: [f64; 3], rng: &mut Rng) -> [f64; LATENT_DIM] {
    let mut z = [0.0; LATENT_DIM];
    z[0] = vs[0];
    z[1] = vs[1];
    z[2] = vs[2];
    for v in z.iter_mut().skip(3) {
        *v = rng.normal() * 0.01;
    }
    let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    z.iter_mut().for_each(|v| *v /= norm);
    z
}

#[test]
fn contrastive_identical_positive_pair_is_zero() {
    let mut rng = Rng::seed_from(18);
    let z = unit([1.0, 0.0, 0.0], &mut rng);
    let (loss, has_pos) = contrastive_loss_value(&[z, z], &[2, 2], 1.0).unwrap();
    assert!(has_pos);
    assert!(loss.abs() < 1e-12, "loss {loss}");
}

#[test]
fn contrastive_without_positives_is_flagged_zero() {
    let mut rng = Rng::seed_from(19);
    let a = unit([1.0, 0.0, 0.0], &mut rng);
    let b = unit([0.0, 1.0, 0.0], &mut rng);
    let (loss, has_pos) = contrastive_loss_value(&[a, b], &[0, 3], 1.0).unwrap();
    assert!(!has_pos);
    assert_eq!(loss, 0.0);
}

#[test]
fn contrastive_decreases_as_positives_align() {
    let mut rng = Rng::seed_from(20);
    let anchor = unit([1.0, 0.0, 0.0], &mut rng);
    let negative = unit([0.0, 0.0, 1.0], &mut rng);
    let far = unit([0.0, 1.0, 0.0], &mut rng);
    let near = unit([0.9, 0.1, 0.0], &mut rng);
    let (loss_far, _) = contrastive_loss_value(&[anchor, far, negative], &[1, 1, 0], 1.0).unwrap();
    let (loss_near, _) =
        contrastive_loss_value(&[anchor, near, negative], &[1, 1, 0], 1.0).unwrap();
    assert!(
        loss_near < loss_far,
        "aligning the positive must reduce the loss: {loss_near} vs {loss_far}"
    );
}

#[test]
fn head_loss_zero_at_exact_targets() {
    let mut tape = Tape::new();
    let target = smoothed_terrain_target(TerrainType::Stairs);
    let robot = RobotParams::midpoint().to_array();
    let p_e = tape.constant(crate::numgrad::Tensor::new(vec![1, 5], target.to_vec()).unwrap());
    let p_r = tape.constant(crate::numgrad::Tensor::new(vec![1, 4], robot.to_vec()).unwrap());
    let (le, lr) = head_losses_graph(&mut tape, p_e, p_r, &target, &robot, &TEST_DR, false).unwrap();
    assert!(tape.value(le).item().abs() < 1e-12);
    assert!(tape.value(lr).item().abs() < 1e-12);
}

#[test]
fn head_kl_matches_hand_evaluation_for_uniform_model() {
    // uniform p_e against the eps = 0.05 smoothed one-hot [0.96, 0.01 x 4]
    let mut tape = Tape::new();
    let target = smoothed_terrain_target(TerrainType::Flat);
    assert!((target[0] - 0.96).abs() < 1e-12);
    assert!((target[1] - 0.01).abs() < 1e-12);
    let uniform = [0.2; 5];
    let robot = RobotParams::midpoint().to_array();
    let p_e = tape.constant(crate::numgrad::Tensor::new(vec![1, 5], uniform.to_vec()).unwrap());
    let p_r = tape.constant(crate::numgrad::Tensor::new(vec![1, 4], robot.to_vec()).unwrap());
    let (le, _) = head_losses_graph(&mut tape, p_e, p_r, &target, &robot, &TEST_DR, false).unwrap();
    let oracle: f64 = uniform
        .iter()
        .zip(target.iter())
        .map(|(p, c)| p * (p / c).ln())
        .sum();
    assert!((tape.value(le).item() - oracle).abs() < 1e-12);
}

#[test]
fn head_loss_rejects_unsupported_targets() {
    let mut tape = Tape::new();
    let robot = RobotParams::midpoint().to_array();
    let p_e = tape.constant(crate::numgrad::Tensor::new(vec![1, 5], vec![0.2; 5]).unwrap());
    let p_r = tape.constant(crate::numgrad::Tensor::new(vec![1, 4], robot.to_vec()).unwrap());
    let hard = [1.0, 0.0, 0.0, 0.0, 0.0];
    assert!(head_losses_graph(&mut tape, p_e, p_r, &hard, &robot, &TEST_DR, false).is_err());
    let target = smoothed_terrain_target(TerrainType::Flat);
    let zero_r = [0.3, 0.0, 0.1, 0.25];
    assert!(head_losses_graph(&mut tape, p_e, p_r, &target, &robot, &zero_r, false).is_err());
}

#[test]
fn staged_gradients_match_single_tape() {
    let codec = TrajCodec::init(tiny_config(12), 21).unwrap();
    let records = vec![
        sample_record(TerrainType::Flat, 5, 22),
        sample_record(TerrainType::Flat, 5, 23),
        sample_record(TerrainType::Stairs, 5, 24),
    ];
    let refs: Vec<&TrajectoryRecord> = records.iter().collect();
    let mut rng = Rng::seed_from(25);
    let noises: Vec<[f64; LATENT_DIM]> = (0..3)
        .map(|_| {
            let mut n = [0.0; LATENT_DIM];
            n.iter_mut().for_each(|v| *v = rng.normal());
            n
        })
        .collect();

    let (stats, staged) = staged_loss_and_grads(&codec, &refs, &noises, &TEST_DR).unwrap();

    let mut tape = Tape::new();
    let bound = tape.bind(&codec.params);
    let loss = joint_loss_graph(&codec, &mut tape, &bound, &refs, &noises, &TEST_DR).unwrap();
    assert!((tape.value(loss).item() - stats.total).abs() < 1e-10);
    let tg = tape.backward(loss).unwrap();
    let single = tape.param_grads(&tg, &codec.params);

    for (name, g_single) in single.iter() {
        let g_staged = staged.get(name).unwrap();
        for (a, b) in g_single.values().iter().zip(g_staged.values()) {
            let scale = a.abs().max(b.abs()).max(1e-12);
            assert!(
                (a - b).abs() / scale < 1e-9,
                "{name}: staged {b} vs single {a}"
            );
        }
    }
}

/// Low-magnitude rollout for gradient checking: keeps the joint loss
/// small so central-difference cancellation noise stays far below the
/// tolerance even on coordinates with tiny true gradients.
pub fn quiet_record(terrain: TerrainType, steps: usize, seed: u64) -> TrajectoryRecord {
    let mut env = make_env(&EnvParams::one_hot(terrain, 0.6), seed).unwrap();
    let label = TrajectoryLabel {
        terrain,
        difficulty: 0.6,
        robot_params: env.robot,
        checkpoint_id: 0,
    };
    let (rec, _) = rollout(&mut env, |o| 0.1 - 0.1 * o.velocity, steps, Some(label)).unwrap();
    rec
}

/// Micro-batch fixture for the joint-loss gradient check, shared with the
/// acceptance suite. Fixture seeds are screened so the check point sits
/// clear of the |p_r - c_r| absolute-value kink and of the roundoff floor
/// on near-zero gradients.
pub fn joint_grad_check_report(seed: u64, h: f64) -> crate::numgrad::GradCheckReport {
    let config = EncoderConfig {
        d_model: 16,
        layers: 1,
        heads: 2,
        max_timesteps: 8,
        batch_size: 4,
        ..EncoderConfig::default()
    };
    let codec = TrajCodec::init(config, 1000 + seed).unwrap();
    let records = vec![
        quiet_record(TerrainType::Flat, 3, 2000 + seed),
        quiet_record(TerrainType::Stairs, 3, 3000 + seed),
    ];
    let mut rng = Rng::seed_from(4000 + seed);
    let noises: Vec<[f64; LATENT_DIM]> = (0..2)
        .map(|_| {
            let mut n = [0.0; LATENT_DIM];
            n.iter_mut().for_each(|v| *v = rng.normal());
            n
        })
        .collect();
    let params = codec.params.clone();
    let build = move |tape: &mut Tape, bound: &crate::numgrad::BoundParams| {
        let refs: Vec<&TrajectoryRecord> = records.iter().collect();
        joint_loss_graph(&codec, tape, bound, &refs, &noises, &TEST_DR).map_err(|e| match e {
            CodecError::Num(n) => n,
            other => NumError::Config(other.to_string()),
        })
    };
    grad_check(&build, &params, h).unwrap()
}

#[test]
fn joint_loss_passes_grad_check_on_micro_batch() {
    let report = joint_grad_check_report(14, 3e-5);
    assert!(
        report.max_relative_error < 1e-4,
        "joint loss grad check: {report:?}"
    );
}

#[test]
fn training_loss_trends_down_on_fixture() {
    // 200-trajectory fixture with short rollouts; moving-average window 3
    let mut config = tiny_config(25);
    config.batch_size = 16;
    config.epochs = 5;
    config.lr = 3e-4;
    let mut codec = TrajCodec::init(config, 31).unwrap();
    let mut records = Vec::new();
    for i in 0..200u64 {
        let terrain = TerrainType::ALL[(i % 5) as usize];
        records.push(sample_record(terrain, 25, 100 + i));
    }
    let stats = train_encoder(&mut codec, &records, TEST_DR, 32).unwrap();
    assert_eq!(stats.len(), 5);
    let totals: Vec<f64> = stats.iter().map(|s| s.total).collect();
    let avg = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    let first = avg(&totals[0..3]);
    let last = avg(&totals[2..5]);
    assert!(
        last <= first + 1e-9,
        "loss did not trend down: {totals:?}"
    );
}

#[test]
fn pure_autoencoder_configuration_matches_standalone_recon() {
    // beta_kl = 0, lambda_con = lambda_e = lambda_r = 0 reduces the joint
    // objective to the reconstruction term alone
    let mut config = tiny_config(12);
    config.lambda_con = 0.0;
    config.lambda_e = 0.0;
    config.lambda_r = 0.0;
    config.beta_kl = 0.0;
    let codec = TrajCodec::init(config, 33).unwrap();
    let records = vec![
        sample_record(TerrainType::Flat, 6, 34),
        sample_record(TerrainType::Rough, 6, 35),
    ];
    let refs: Vec<&TrajectoryRecord> = records.iter().collect();
    let noises = vec![[0.0; LATENT_DIM]; 2];
    let (stats, _) = staged_loss_and_grads(&codec, &refs, &noises, &TEST_DR).unwrap();

    // standalone recon path, averaged over the batch
    let mut manual = 0.0;
    for rec in &records {
        let z = codec
            .encode(rec, EncodeMode::Sample { noise: &[0.0; LATENT_DIM] })
            .unwrap()
            .z;
        let mut tape = Tape::new();
        let bound = tape.bind(&codec.params);
        let z_var =
            tape.constant(crate::numgrad::Tensor::new(vec![1, LATENT_DIM], z.to_vec()).unwrap());
        let loss = codec.recon_loss_graph(&mut tape, &bound, rec, z_var).unwrap();
        manual += tape.value(loss).item() / 2.0;
    }
    assert!((stats.total - manual).abs() < 1e-10);
}
