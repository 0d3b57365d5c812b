//! Run configuration: one JSON document covering every subsystem, with
//! explicit defaults and unknown-key rejection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::loopctl::LoopConfig;
use crate::ppo::{PpoConfig, PretrainConfig};
use crate::terrasim::{DrRange, EnvParams, RobotParams, TerrainType, DIFFICULTY_GRID, TERRAIN_COUNT};
use crate::trajcodec::EncoderConfig;

use super::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Terrain mix used for pretraining domain randomization.
    pub terrain_probs: [f64; TERRAIN_COUNT],
    /// Difficulty levels sampled per episode.
    pub difficulty_grid: Vec<f64>,
    /// Center of the robot-parameter randomization (c_r).
    pub robot_params: [f64; 4],
    /// Pretraining DR half-widths R (continual training halves them).
    pub dr_range: [f64; 4],
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            terrain_probs: [1.0 / TERRAIN_COUNT as f64; TERRAIN_COUNT],
            difficulty_grid: DIFFICULTY_GRID.to_vec(),
            robot_params: RobotParams::midpoint().to_array(),
            dr_range: [0.3, 0.4, 0.1, 0.25],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub iterations: usize,
    pub encoder_start: usize,
    pub envs: usize,
    pub steps_per_iteration: usize,
    pub checkpoints: usize,
    pub trajectories_per_checkpoint: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            iterations: 150,
            encoder_start: 150,
            envs: 64,
            steps_per_iteration: 24,
            checkpoints: 10,
            trajectories_per_checkpoint: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSection {
    pub alpha: f64,
    pub tau: f64,
    pub knn: usize,
    pub trajectories_per_batch: usize,
    pub iterations_per_episode: usize,
    pub episodes_per_redeploy: usize,
    pub loops: usize,
    pub eval_episodes: usize,
    pub test_terrain: String,
    pub test_difficulty: f64,
    /// Robot parameters of the test environment (defaults to the sim
    /// section's center when absent).
    pub test_robot_params: Option<[f64; 4]>,
    /// Iterations for the Origin/Expert reference arms of the summary;
    /// Origin additionally inherits the pretraining budget.
    pub reference_iterations: usize,
}

impl Default for AdaptSection {
    fn default() -> Self {
        AdaptSection {
            alpha: 0.8,
            tau: 0.7,
            knn: 16,
            trajectories_per_batch: 5,
            iterations_per_episode: 200,
            episodes_per_redeploy: 10,
            loops: 10,
            eval_episodes: 10,
            test_terrain: "stairs".to_string(),
            test_difficulty: 0.9,
            test_robot_params: None,
            reference_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    pub pairs: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub seed: u64,
    /// Optional explicit pair file (JSON array of pair documents); used to
    /// reproduce dumped failures. Entries are not pre-validated.
    pub pairs_file: Option<String>,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            pairs: 100,
            max_states: 10,
            max_actions: 5,
            seed: 1,
            pairs_file: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: Option<u32>,
    /// Echo of the subcommand that produced a resolved config; ignored on
    /// input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    pub seed: u64,
    pub sim: SimSection,
    pub pretrain: PretrainSection,
    pub ppo: PpoConfig,
    pub codec: EncoderConfig,
    pub adapt: AdaptSection,
    pub theory: TheorySection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(v) = config.schema_version {
            if v != SCHEMA_VERSION {
                return Err(CliError::Config(format!(
                    "schema_version {v} unsupported (expected {SCHEMA_VERSION})"
                )));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.env_params(self.sim.difficulty_grid.first().copied().unwrap_or(0.6))
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.codec
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.ppo
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if TerrainType::from_name(&self.adapt.test_terrain).is_none() {
            return Err(CliError::Config(format!(
                "adapt.test_terrain {} unknown (flat|slope_up|slope_down|stairs|rough)",
                self.adapt.test_terrain
            )));
        }
        if !DIFFICULTY_GRID.contains(&self.adapt.test_difficulty) {
            return Err(CliError::Config(format!(
                "adapt.test_difficulty {} not in {DIFFICULTY_GRID:?}",
                self.adapt.test_difficulty
            )));
        }
        if self.theory.pairs == 0 || self.theory.max_states < 2 || self.theory.max_actions < 2 {
            return Err(CliError::Config(
                "theory: pairs >= 1, max_states >= 2, max_actions >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn env_params(&self, difficulty: f64) -> EnvParams {
        EnvParams {
            terrain_probs: self.sim.terrain_probs,
            difficulty,
            robot_params: RobotParams::from_array(self.sim.robot_params),
            dr_range: DrRange::from_array(self.sim.dr_range),
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            iterations: self.pretrain.iterations,
            encoder_start: self.pretrain.encoder_start,
            envs: self.pretrain.envs,
            steps_per_iteration: self.pretrain.steps_per_iteration,
            checkpoints: self.pretrain.checkpoints,
            trajectories_per_checkpoint: self.pretrain.trajectories_per_checkpoint,
            env_params: self.env_params(self.sim.difficulty_grid.first().copied().unwrap_or(0.6)),
            difficulty_grid: self.sim.difficulty_grid.clone(),
            ppo: self.ppo.clone(),
            seed: self.seed,
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            alpha: self.adapt.alpha,
            tau: self.adapt.tau,
            knn: self.adapt.knn,
            trajectories_per_batch: self.adapt.trajectories_per_batch,
            iterations_per_episode: self.adapt.iterations_per_episode,
            episodes_per_redeploy: self.adapt.episodes_per_redeploy,
            loops: self.adapt.loops,
            envs: self.pretrain.envs,
            steps_per_iteration: self.pretrain.steps_per_iteration,
            ppo: self.ppo.clone(),
            dr_range: DrRange::from_array(self.sim.dr_range),
            difficulty_grid: self.sim.difficulty_grid.clone(),
            eval_episodes: self.adapt.eval_episodes,
        }
    }

    pub fn test_env_params(&self) -> Result<EnvParams, CliError> {
        let terrain = TerrainType::from_name(&self.adapt.test_terrain).ok_or_else(|| {
            CliError::Config(format!("unknown terrain {}", self.adapt.test_terrain))
        })?;
        let mut params = EnvParams::one_hot(terrain, self.adapt.test_difficulty);
        let robot = self.adapt.test_robot_params.unwrap_or(self.sim.robot_params);
        params.robot_params = RobotParams::from_array(robot);
        params.robot_params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(params)
    }
}

/// Fully resolved config as pretty JSON (all defaults explicit) with the
/// executing mode recorded.
pub fn resolved_config_json(config: &RunConfig, mode: &str) -> String {
    let mut resolved = config.clone();
    resolved.schema_version = Some(SCHEMA_VERSION);
    resolved.mode = Some(mode.to_string());
    serde_json::to_string_pretty(&resolved).expect("pretty json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{ "seed": 1, "bogus_key": true }"#;
        let err = serde_json::from_str::<RunConfig>(text).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn nested_unknown_keys_rejected_with_pointer() {
        let text = r#"{ "ppo": { "gama": 0.9 } }"#;
        let err = serde_json::from_str::<RunConfig>(text).unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn resolved_config_lists_defaults_and_mode() {
        let json = resolved_config_json(&RunConfig::default(), "pretrain");
        assert!(json.contains("\"mode\": \"pretrain\""));
        assert!(json.contains("\"gamma\": 0.99"));
        assert!(json.contains("\"alpha\": 0.8"));
        assert!(json.contains("\"tau\": 0.7"));
        assert!(json.contains("\"schema_version\": 1"));
        // resolved output parses back losslessly
        let round: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(round["adapt"]["loops"], 10);
    }

    #[test]
    fn bad_schema_version_rejected() {
        let dir = std::env::temp_dir().join("loopsr-config-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_version.json");
        std::fs::write(&path, r#"{ "schema_version": 99 }"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(CliError::Config(_))));
    }
}
