//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::latentstore::{build_reference, fuse, load_store, save_store, ParamsEstimate, ReferenceStore};
use crate::loopctl::{adaptation_loop, LoopConfig, SimDeployment};
use crate::mdpgap::{decompose, random_mdp_pair, TabularMdp};
use crate::numgrad::{load_params, save_params};
use crate::ppo::{evaluate, pretrain, ActorCritic, EnvPool, PpoError};
use crate::rng::{splitmix64, Rng};
use crate::terrasim::{
    load_trajectories, save_trajectories, EnvParams, TerrainType, TrajectoryRecord,
};
use crate::trajcodec::{train_encoder, CodecTrainer, TrajCodec};

use super::config::{resolved_config_json, RunConfig};
use super::{CliArgs, CliError};

fn load_run_config(args: &CliArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(loops) = args.loops {
        config.adapt.loops = loops;
    }
    if let Some(terrain) = &args.test_terrain {
        config.adapt.test_terrain = terrain.clone();
    }
    if let Some(difficulty) = args.test_difficulty {
        config.adapt.test_difficulty = difficulty;
    }
    config.validate()?;
    Ok(config)
}

fn require_out(args: &CliArgs) -> Result<PathBuf, CliError> {
    args.out
        .clone()
        .ok_or_else(|| CliError::Config("--out <dir> is required".into()))
}

fn require_run_dir(args: &CliArgs) -> Result<PathBuf, CliError> {
    args.run_dir
        .clone()
        .ok_or_else(|| CliError::Config("--run-dir <dir> is required".into()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| CliError::Numerical(format!("serialize metrics: {e}")))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

fn artifact<T>(
    path: &Path,
    loader: impl FnOnce(&Path) -> Result<T, crate::fileio::FormatError>,
) -> Result<T, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.display().to_string()));
    }
    loader(path).map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))
}

struct RunDirArtifacts {
    config: RunConfig,
    policy: ActorCritic,
    codec: TrajCodec,
    store: ReferenceStore,
    dataset: Vec<TrajectoryRecord>,
}

fn load_run_dir(run_dir: &Path, overrides: &CliArgs) -> Result<RunDirArtifacts, CliError> {
    let config_path = run_dir.join("config.json");
    if !config_path.exists() {
        return Err(CliError::MissingArtifact(config_path.display().to_string()));
    }
    let mut config = RunConfig::load(&config_path)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(loops) = overrides.loops {
        config.adapt.loops = loops;
    }
    if let Some(terrain) = &overrides.test_terrain {
        config.adapt.test_terrain = terrain.clone();
    }
    if let Some(difficulty) = overrides.test_difficulty {
        config.adapt.test_difficulty = difficulty;
    }
    config.validate()?;

    let policy = ActorCritic::from_params(artifact(
        &run_dir.join("checkpoints/policy.lsrw"),
        load_params,
    )?);
    let codec_params = artifact(&run_dir.join("checkpoints/codec.lsrw"), load_params)?;
    let codec = TrajCodec {
        config: config.codec.clone(),
        params: codec_params,
    };
    let store = artifact(&run_dir.join("store/reference.lsrs"), load_store)?;
    let dataset = artifact(&run_dir.join("dataset/trajectories.lsrt"), load_trajectories)?;
    Ok(RunDirArtifacts {
        config,
        policy,
        codec,
        store,
        dataset,
    })
}

/// pretrain: PPO under domain randomization, encoder training on the
/// accumulated dataset, reference-store construction. Writes the resolved
/// config, both checkpoints, the dataset, the store, and metrics.
pub fn cmd_pretrain(args: &CliArgs) -> Result<(), CliError> {
    let config = load_run_config(args)?;
    let out = require_out(args)?;
    fs::create_dir_all(&out)?;
    write_text(&out.join("config.json"), &resolved_config_json(&config, "pretrain"))?;

    let pre_cfg = config.pretrain_config();
    let mut codec = TrajCodec::init(config.codec.clone(), splitmix64(config.seed ^ 0xc0dec))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut trainer = CodecTrainer::new(&codec, config.sim.dr_range);

    let result = pretrain(&pre_cfg, Some((&mut codec, &mut trainer))).map_err(map_ppo)?;
    if let Some(at) = result.diverged_at {
        eprintln!("warning: training diverged at iteration {at}; kept last checkpoint");
    }

    // offline encoder training over the full dataset
    let encoder_stats = train_encoder(
        &mut codec,
        &result.dataset,
        config.sim.dr_range,
        splitmix64(config.seed ^ 0xe2c),
    )
    .map_err(|e| CliError::Numerical(e.to_string()))?;

    let store = build_reference(&result.dataset, &codec)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    save_params(&out.join("checkpoints/policy.lsrw").tap_create_dir()?, &result.actor_critic.params)
        .map_err(map_format)?;
    save_params(&out.join("checkpoints/codec.lsrw"), &codec.params).map_err(map_format)?;
    save_trajectories(
        &out.join("dataset/trajectories.lsrt").tap_create_dir()?,
        &result.dataset,
    )
    .map_err(map_format)?;
    save_store(&out.join("store/reference.lsrs").tap_create_dir()?, &store).map_err(map_format)?;
    write_jsonl(&out.join("metrics/pretrain.jsonl"), &result.metrics)?;
    write_jsonl(&out.join("metrics/encoder.jsonl"), &encoder_stats)?;

    println!(
        "pretrain complete: {} iterations, {} trajectories, store of {} entries -> {}",
        pre_cfg.iterations,
        result.dataset.len(),
        store.len(),
        out.display()
    );
    Ok(())
}

trait TapCreateDir: Sized {
    fn tap_create_dir(self) -> Result<Self, CliError>;
}

impl TapCreateDir for PathBuf {
    fn tap_create_dir(self) -> Result<Self, CliError> {
        if let Some(parent) = self.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(self)
    }
}

fn map_ppo(e: PpoError) -> CliError {
    match e {
        PpoError::Config(m) => CliError::Config(m),
        PpoError::Sim(s) => CliError::Config(s.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

fn map_format(e: crate::fileio::FormatError) -> CliError {
    CliError::Numerical(e.to_string())
}

/// adapt: run the lifelong loop against the test environment, then train
/// the Origin (equal steps, no adaptation) and Expert (target-trained)
/// references, and emit the comparison summary.
pub fn cmd_adapt(args: &CliArgs) -> Result<(), CliError> {
    let run_dir = require_run_dir(args)?;
    let artifacts = load_run_dir(&run_dir, args)?;
    let config = &artifacts.config;
    let loop_cfg = config.loop_config();
    let test_params = config.test_env_params()?;

    let mut deployment = SimDeployment::new(test_params.clone(), splitmix64(config.seed ^ 0xdee9))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let result = adaptation_loop(
        &loop_cfg,
        &artifacts.policy,
        &artifacts.codec,
        &artifacts.store,
        &mut deployment,
        Some(&test_params),
        splitmix64(config.seed ^ 0xada),
    )
    .map_err(|e| CliError::Numerical(e.to_string()))?;
    write_jsonl(&run_dir.join("metrics/adapt.jsonl"), &result.metrics)?;

    let eval_seeds: Vec<u64> = (0..config.adapt.eval_episodes as u64)
        .map(|e| splitmix64(config.seed ^ 0xe7a ^ e))
        .collect();
    let adapted_eval = evaluate(&result.policy, &test_params, &eval_seeds).map_err(map_ppo)?;

    // Origin: the same pretrained policy trained further under the original
    // wide randomization for the same number of continual iterations.
    let origin_iterations = loop_cfg.loops * loop_cfg.iterations_per_episode;
    let origin = continue_training(
        config,
        &artifacts.policy,
        &config.env_params(config.sim.difficulty_grid.first().copied().unwrap_or(0.6)),
        origin_iterations,
        splitmix64(config.seed ^ 0x0419),
    )?;
    let origin_eval = evaluate(&origin, &test_params, &eval_seeds).map_ppo_err()?;

    // Expert: trained on the test environment itself.
    let expert = train_expert(config, &test_params, config.adapt.reference_iterations)?;
    let expert_eval = evaluate(&expert, &test_params, &eval_seeds).map_ppo_err()?;

    let summary = format!(
        "terrain,difficulty,origin_reward,adapted_reward,expert_reward\n{},{},{},{},{}\n",
        config.adapt.test_terrain,
        config.adapt.test_difficulty,
        origin_eval.mean_step_reward,
        adapted_eval.mean_step_reward,
        expert_eval.mean_step_reward
    );
    write_text(&run_dir.join("summary.csv"), &summary)?;
    println!(
        "adapt complete: origin {:.4}, adapted {:.4}, expert {:.4} on {} d={}",
        origin_eval.mean_step_reward,
        adapted_eval.mean_step_reward,
        expert_eval.mean_step_reward,
        config.adapt.test_terrain,
        config.adapt.test_difficulty
    );
    Ok(())
}

trait MapPpoErr<T> {
    fn map_ppo_err(self) -> Result<T, CliError>;
}

impl<T> MapPpoErr<T> for Result<T, PpoError> {
    fn map_ppo_err(self) -> Result<T, CliError> {
        self.map_err(map_ppo)
    }
}

/// Continue PPO training of an existing policy under given env params.
fn continue_training(
    config: &RunConfig,
    policy: &ActorCritic,
    env_params: &EnvParams,
    iterations: usize,
    seed: u64,
) -> Result<ActorCritic, CliError> {
    use crate::numgrad::{AdamConfig, AdamState};
    use crate::ppo::ppo_update;

    let mut trainee = policy.clone();
    let mut adam = AdamState::new(&trainee.params, AdamConfig::with_lr(config.ppo.lr));
    let mut pool = EnvPool::new(
        env_params.clone(),
        config.sim.difficulty_grid.clone(),
        config.pretrain.envs,
        splitmix64(seed ^ 0x900d),
    )
    .map_ppo_err()?;
    let mut rollout_rng = Rng::seed_from(splitmix64(seed ^ 0x1));
    let mut update_rng = Rng::seed_from(splitmix64(seed ^ 0x2));
    let mut last_good = trainee.params.clone();
    for _ in 0..iterations {
        let buffer = pool
            .collect(&trainee, config.pretrain.steps_per_iteration, &mut rollout_rng)
            .map_ppo_err()?;
        match ppo_update(&buffer, &mut trainee, &mut adam, &config.ppo, &mut update_rng) {
            Ok(_) => last_good = trainee.params.clone(),
            Err(PpoError::Diverged(_)) => {
                trainee.params = last_good;
                break;
            }
            Err(other) => return Err(map_ppo(other)),
        }
    }
    Ok(trainee)
}

fn train_expert(
    config: &RunConfig,
    test_params: &EnvParams,
    iterations: usize,
) -> Result<ActorCritic, CliError> {
    let fresh = ActorCritic::init(splitmix64(config.seed ^ 0xf00))
        .map_err(|e| CliError::Config(e.to_string()))?;
    // the expert trains on exactly the test environment: same terrain,
    // same difficulty, no parameter randomization beyond the test spec
    let mut expert_params = test_params.clone();
    expert_params.dr_range = crate::terrasim::DrRange::zero();
    continue_training(
        config,
        &fresh,
        &expert_params,
        iterations,
        splitmix64(config.seed ^ 0xe8),
    )
}

/// eval: score a run directory's policy on the configured test env.
pub fn cmd_eval(args: &CliArgs) -> Result<(), CliError> {
    let run_dir = require_run_dir(args)?;
    let config_path = run_dir.join("config.json");
    if !config_path.exists() {
        return Err(CliError::MissingArtifact(config_path.display().to_string()));
    }
    let mut config = RunConfig::load(&config_path)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(terrain) = &args.test_terrain {
        config.adapt.test_terrain = terrain.clone();
    }
    if let Some(difficulty) = args.test_difficulty {
        config.adapt.test_difficulty = difficulty;
    }
    config.validate()?;
    let policy = ActorCritic::from_params(artifact(
        &run_dir.join("checkpoints/policy.lsrw"),
        load_params,
    )?);
    let test_params = config.test_env_params()?;
    let seeds: Vec<u64> = (0..config.adapt.eval_episodes as u64)
        .map(|e| splitmix64(config.seed ^ 0xe7a ^ e))
        .collect();
    let metrics = evaluate(&policy, &test_params, &seeds).map_ppo_err()?;
    let json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    write_text(&run_dir.join("metrics/eval.json"), &json)?;
    println!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct TheoryRow {
    pair: usize,
    states: usize,
    actions: usize,
    gamma: f64,
    lhs: f64,
    rhs: f64,
    rhs_reward: f64,
    rhs_policy: f64,
    rhs_occupancy: f64,
    max_residual: f64,
    eps_pi: f64,
    eps_rho: f64,
    bound_holds: bool,
}

#[derive(Serialize, serde::Deserialize)]
pub struct MdpPairDoc {
    pub id: usize,
    pub train: TabularMdp,
    pub test: TabularMdp,
}

const IDENTITY_TOLERANCE: f64 = 1e-9;

/// theory: sweep MDP pairs, assert the decomposition identity, report the
/// bound inequality statistics. Identity failures dump the offending pair
/// for reproduction and exit with the numerical-failure code.
pub fn cmd_theory(args: &CliArgs) -> Result<(), CliError> {
    let config = load_run_config(args)?;
    let out = require_out(args)?;
    fs::create_dir_all(&out)?;
    write_text(&out.join("config.json"), &resolved_config_json(&config, "theory"))?;

    let pairs: Vec<MdpPairDoc> = match &config.theory.pairs_file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|_| CliError::MissingArtifact(path.clone()))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("pairs file {path}: {e}")))?
        }
        None => {
            let mut rng = Rng::seed_from(config.theory.seed);
            (0..config.theory.pairs)
                .map(|id| {
                    let (train, test) =
                        random_mdp_pair(&mut rng, config.theory.max_states, config.theory.max_actions);
                    MdpPairDoc { id, train, test }
                })
                .collect()
        }
    };

    let mut rows = Vec::with_capacity(pairs.len());
    let mut holds = 0usize;
    for doc in &pairs {
        let checked = doc
            .train
            .validate()
            .and_then(|_| doc.test.validate())
            .and_then(|_| decompose(&doc.train, &doc.test));
        let report = match checked {
            Ok(r) => r,
            Err(e) => {
                let dump_path = out.join("theory_failure.json");
                dump_pair(&dump_path, doc)?;
                return Err(CliError::Numerical(format!(
                    "pair {} failed ({e}); dumped to {} for reproduction",
                    doc.id,
                    dump_path.display()
                )));
            }
        };
        if report.max_residual >= IDENTITY_TOLERANCE {
            let dump_path = out.join("theory_failure.json");
            dump_pair(&dump_path, doc)?;
            return Err(CliError::Numerical(format!(
                "pair {}: identity residual {} >= {IDENTITY_TOLERANCE}; dumped to {}",
                doc.id,
                report.max_residual,
                dump_path.display()
            )));
        }
        if report.bound_holds {
            holds += 1;
        }
        rows.push(TheoryRow {
            pair: doc.id,
            states: doc.train.n_states,
            actions: doc.train.n_actions,
            gamma: doc.train.gamma,
            lhs: report.lhs_sup,
            rhs: report.rhs_bound,
            rhs_reward: report.rhs_terms[0],
            rhs_policy: report.rhs_terms[1],
            rhs_occupancy: report.rhs_terms[2],
            max_residual: report.max_residual,
            eps_pi: report.eps_pi,
            eps_rho: report.eps_rho,
            bound_holds: report.bound_holds,
        });
    }

    let mut csv = String::from(
        "pair,states,actions,gamma,lhs,rhs,rhs_reward,rhs_policy,rhs_occupancy,max_residual,eps_pi,eps_rho,bound_holds\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.pair,
            r.states,
            r.actions,
            r.gamma,
            r.lhs,
            r.rhs,
            r.rhs_reward,
            r.rhs_policy,
            r.rhs_occupancy,
            r.max_residual,
            r.eps_pi,
            r.eps_rho,
            r.bound_holds
        ));
    }
    write_text(&out.join("theory.csv"), &csv)?;
    println!(
        "theory sweep: {} pairs, zero identity failures, bound holds on {}/{} ({:.1}%)",
        rows.len(),
        holds,
        rows.len(),
        100.0 * holds as f64 / rows.len().max(1) as f64
    );
    Ok(())
}

fn dump_pair(path: &Path, doc: &MdpPairDoc) -> Result<(), CliError> {
    let dump = serde_json::to_string_pretty(&vec![doc])
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    write_text(path, &dump)
}

/// ablate: retrain codec variants (full loss, no contrastive, no
/// reconstruction) on the run's dataset and tabulate identification
/// quality; the no-soft-update variant reports adaptation reward ratios.
pub fn cmd_ablate(args: &CliArgs) -> Result<(), CliError> {
    let run_dir = require_run_dir(args)?;
    let artifacts = load_run_dir(&run_dir, args)?;
    let config = &artifacts.config;

    // deterministic split: every 5th record held out
    let mut train: Vec<TrajectoryRecord> = Vec::new();
    let mut held: Vec<TrajectoryRecord> = Vec::new();
    for (i, rec) in artifacts.dataset.iter().enumerate() {
        if i % 5 == 4 {
            held.push(rec.clone());
        } else {
            train.push(rec.clone());
        }
    }
    if held.is_empty() || train.len() < 2 {
        return Err(CliError::Config(
            "dataset too small to split for ablation".into(),
        ));
    }

    let variants: [(&str, f64, f64); 3] = [
        ("LSR", config.codec.lambda_con, config.codec.lambda_recon),
        ("LSR-w/o-con", 0.0, config.codec.lambda_recon),
        ("LSR-w/o-AE", config.codec.lambda_con, 0.0),
    ];
    let mut scores = Vec::new();
    for (name, lambda_con, lambda_recon) in variants {
        let mut codec_cfg = config.codec.clone();
        codec_cfg.lambda_con = lambda_con;
        codec_cfg.lambda_recon = lambda_recon;
        let mut codec = TrajCodec::init(codec_cfg, splitmix64(config.seed ^ 0xc0dec))
            .map_err(|e| CliError::Config(e.to_string()))?;
        train_encoder(
            &mut codec,
            &train,
            config.sim.dr_range,
            splitmix64(config.seed ^ 0xab1e),
        )
        .map_err(|e| CliError::Numerical(e.to_string()))?;
        let store = build_reference(&train, &codec)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let score = identification_scores(&codec, &store, &held, config)?;
        println!(
            "{name}: overall {:.1}% | slope {:.1}% stair {:.1}% plain {:.1}% | friction {:.1}% mass {:.1}%",
            score.overall_accuracy, score.slope, score.stair, score.plain, score.friction, score.mass
        );
        scores.push((name, score));
    }

    // soft-update ablation: adaptation reward with tau = 0 relative to the
    // configured tau, on the slope and stair domains
    let mut su_slope = None;
    let mut su_stair = None;
    if config.adapt.loops > 0 {
        su_slope = Some(soft_update_ratio(&artifacts, TerrainType::SlopeUp)?);
        su_stair = Some(soft_update_ratio(&artifacts, TerrainType::Stairs)?);
    }

    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.1}"),
        None => "/".to_string(),
    };
    let mut csv = String::from("domain,LSR,LSR-w/o-con,LSR-w/o-AE,LSR-w/o-su\n");
    let rows: [(&str, fn(&IdScores) -> f64, Option<f64>); 5] = [
        ("Slope", |s| s.slope, su_slope),
        ("Stair", |s| s.stair, su_stair),
        ("Plain", |s| s.plain, None),
        ("Friction", |s| s.friction, None),
        ("Mass", |s| s.mass, None),
    ];
    for (domain, get, su) in rows {
        csv.push_str(&format!(
            "{},{:.1},{:.1},{:.1},{}\n",
            domain,
            get(&scores[0].1),
            get(&scores[1].1),
            get(&scores[2].1),
            fmt(su)
        ));
    }
    write_text(&run_dir.join("ablation.csv"), &csv)?;
    println!("ablation table -> {}", run_dir.join("ablation.csv").display());
    Ok(())
}

pub struct IdScores {
    /// Terrain accuracies in percent.
    pub slope: f64,
    pub stair: f64,
    pub plain: f64,
    /// Normalized parameter errors in percent of the DR half-width.
    pub friction: f64,
    pub mass: f64,
    pub overall_accuracy: f64,
}

/// kNN terrain accuracy per domain plus fused robot-parameter errors on a
/// held-out set.
pub fn identification_scores(
    codec: &TrajCodec,
    store: &ReferenceStore,
    held: &[TrajectoryRecord],
    config: &RunConfig,
) -> Result<IdScores, CliError> {
    let knn = config.adapt.knn.min(store.len()).max(1);
    let latents = crate::util::parallel_map(held, |rec| codec.encode_mean(rec));
    let mut domain_hits = [0usize; 3];
    let mut domain_counts = [0usize; 3];
    let mut hits = 0usize;
    let mut friction_err = 0.0;
    let mut mass_err = 0.0;
    for (rec, latent) in held.iter().zip(latents) {
        let label = rec
            .label
            .ok_or_else(|| CliError::Config("held-out record lacks labels".into()))?;
        let z = latent.map_err(|e| CliError::Numerical(e.to_string()))?;
        let retrieved = store
            .knn_retrieve(&z, knn)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let knn_pred = argmax(&retrieved.estimate.terrain_probs);
        if knn_pred == label.terrain.index() {
            hits += 1;
        }
        let domain = match label.terrain {
            TerrainType::SlopeUp | TerrainType::SlopeDown => Some(0),
            TerrainType::Stairs => Some(1),
            TerrainType::Flat => Some(2),
            TerrainType::Rough => None,
        };
        if let Some(d) = domain {
            domain_counts[d] += 1;
            if knn_pred == label.terrain.index() {
                domain_hits[d] += 1;
            }
        }

        let (p_e, p_r) = codec
            .decode_params(&z)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let decoded = ParamsEstimate {
            terrain_probs: p_e,
            robot_params: p_r,
        };
        let fused = fuse(&retrieved.estimate, &decoded, config.adapt.alpha)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let truth = label.robot_params.to_array();
        mass_err += (fused.estimate.robot_params[0] - truth[0]).abs() / config.sim.dr_range[0];
        friction_err += (fused.estimate.robot_params[1] - truth[1]).abs() / config.sim.dr_range[1];
    }
    let pct = |h: usize, c: usize| {
        if c == 0 {
            0.0
        } else {
            100.0 * h as f64 / c as f64
        }
    };
    Ok(IdScores {
        slope: pct(domain_hits[0], domain_counts[0]),
        stair: pct(domain_hits[1], domain_counts[1]),
        plain: pct(domain_hits[2], domain_counts[2]),
        friction: 100.0 * friction_err / held.len() as f64,
        mass: 100.0 * mass_err / held.len() as f64,
        overall_accuracy: pct(hits, held.len()),
    })
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn soft_update_ratio(artifacts: &RunDirArtifacts, terrain: TerrainType) -> Result<f64, CliError> {
    let config = &artifacts.config;
    let mut test_params = EnvParams::one_hot(terrain, config.adapt.test_difficulty);
    test_params.robot_params =
        crate::terrasim::RobotParams::from_array(config.sim.robot_params);

    let run_with_tau = |tau: f64| -> Result<f64, CliError> {
        let mut loop_cfg: LoopConfig = config.loop_config();
        loop_cfg.tau = tau;
        let mut deployment =
            SimDeployment::new(test_params.clone(), splitmix64(config.seed ^ 0xab2))
                .map_err(|e| CliError::Config(e.to_string()))?;
        let result = adaptation_loop(
            &loop_cfg,
            &artifacts.policy,
            &artifacts.codec,
            &artifacts.store,
            &mut deployment,
            Some(&test_params),
            splitmix64(config.seed ^ 0xab3),
        )
        .map_err(|e| CliError::Numerical(e.to_string()))?;
        let last_eval = result
            .metrics
            .last()
            .and_then(|m| m.eval)
            .ok_or_else(|| CliError::Numerical("adaptation produced no evaluation".into()))?;
        Ok(last_eval.mean_step_reward)
    };
    let with_su = run_with_tau(config.adapt.tau)?;
    let without_su = run_with_tau(0.0)?;
    if with_su.abs() < 1e-12 {
        return Ok(0.0);
    }
    Ok(100.0 * without_su / with_su)
}
