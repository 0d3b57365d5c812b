//! Reward-free trajectory records and the trajectory dataset format.
//!
//! Layout: magic "LSRT", version u32, record count u32, then per record
//! (n u32, obs dim u32, action dim u32, obs payload, action payload,
//! next-obs payload, label presence u8, and when present the label block:
//! terrain id u8, difficulty f64, c_r 4 x f64, checkpoint id u32).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fileio::{BinReader, BinWriter, FormatError};

use super::{RobotParams, TerrainType, OBS_DIM};

pub const TRAJ_MAGIC: [u8; 4] = *b"LSRT";
pub const TRAJ_VERSION: u32 = 1;

/// Privileged labels attached to simulator-generated trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLabel {
    pub terrain: TerrainType,
    pub difficulty: f64,
    pub robot_params: RobotParams,
    pub checkpoint_id: u32,
}

/// Reward-free trajectory (o_{1:n}, a_{1:n}, o_{2:n+1}).
///
/// Deployment-collected records carry no label; the encoder-facing view
/// has no reward channel by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub obs: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<f64>,
    pub next_obs: Vec<[f64; OBS_DIM]>,
    pub label: Option<TrajectoryLabel>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

pub fn save_trajectories(path: &Path, records: &[TrajectoryRecord]) -> Result<(), FormatError> {
    let mut w = BinWriter::create(path, TRAJ_MAGIC, TRAJ_VERSION)?;
    w.put_u32(records.len() as u32)?;
    for rec in records {
        let n = rec.obs.len();
        if rec.actions.len() != n || rec.next_obs.len() != n {
            return Err(FormatError::Corrupt(format!(
                "record arrays misaligned: {n} obs, {} actions, {} next_obs",
                rec.actions.len(),
                rec.next_obs.len()
            )));
        }
        w.put_u32(n as u32)?;
        w.put_u32(OBS_DIM as u32)?;
        w.put_u32(1)?; // action dim
        for o in &rec.obs {
            w.put_f64_slice(o)?;
        }
        w.put_f64_slice(&rec.actions)?;
        for o in &rec.next_obs {
            w.put_f64_slice(o)?;
        }
        match &rec.label {
            Some(label) => {
                w.put_u8(1)?;
                w.put_u8(label.terrain.index() as u8)?;
                w.put_f64(label.difficulty)?;
                w.put_f64_slice(&label.robot_params.to_array())?;
                w.put_u32(label.checkpoint_id)?;
            }
            None => w.put_u8(0)?,
        }
    }
    w.finish()
}

pub fn load_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>, FormatError> {
    let mut r = BinReader::open(path, TRAJ_MAGIC, TRAJ_VERSION)?;
    let count = r.get_u32("record count")?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let n = r.get_u32("record length")? as usize;
        let obs_dim = r.get_u32("obs dim")? as usize;
        let act_dim = r.get_u32("action dim")? as usize;
        if obs_dim != OBS_DIM || act_dim != 1 {
            return Err(FormatError::Corrupt(format!(
                "unexpected dims: obs {obs_dim}, action {act_dim}"
            )));
        }
        let mut obs = Vec::with_capacity(n);
        for _ in 0..n {
            let row = r.get_f64_vec(OBS_DIM, "obs payload")?;
            obs.push([row[0], row[1], row[2], row[3]]);
        }
        let actions = r.get_f64_vec(n, "action payload")?;
        let mut next_obs = Vec::with_capacity(n);
        for _ in 0..n {
            let row = r.get_f64_vec(OBS_DIM, "next-obs payload")?;
            next_obs.push([row[0], row[1], row[2], row[3]]);
        }
        let label = match r.get_u8("label presence")? {
            0 => None,
            1 => {
                let terrain_id = r.get_u8("terrain id")? as usize;
                let terrain = TerrainType::from_index(terrain_id).ok_or_else(|| {
                    FormatError::Corrupt(format!("terrain id {terrain_id} out of range"))
                })?;
                let difficulty = r.get_f64("difficulty")?;
                let c_r = r.get_f64_vec(4, "robot params")?;
                let checkpoint_id = r.get_u32("checkpoint id")?;
                Some(TrajectoryLabel {
                    terrain,
                    difficulty,
                    robot_params: RobotParams::from_array([c_r[0], c_r[1], c_r[2], c_r[3]]),
                    checkpoint_id,
                })
            }
            other => {
                return Err(FormatError::Corrupt(format!(
                    "label presence flag {other} invalid"
                )))
            }
        };
        records.push(TrajectoryRecord {
            obs,
            actions,
            next_obs,
            label,
        });
    }
    r.expect_eof()?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrasim::{make_env, rollout, EnvParams};
    use std::fs;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("loopsr-traj-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample_records() -> Vec<TrajectoryRecord> {
        let mut out = Vec::new();
        for (i, terrain) in TerrainType::ALL.iter().enumerate() {
            let mut env = make_env(&EnvParams::one_hot(*terrain, 0.6), i as u64).unwrap();
            let label = TrajectoryLabel {
                terrain: *terrain,
                difficulty: 0.6,
                robot_params: env.robot,
                checkpoint_id: i as u32,
            };
            let (rec, _) = rollout(&mut env, |o| 0.4 - 0.1 * o.velocity, 30, Some(label)).unwrap();
            out.push(rec);
        }
        // one unlabeled deployment-style record
        let mut env = make_env(&EnvParams::one_hot(TerrainType::Stairs, 0.9), 77).unwrap();
        let (rec, _) = rollout(&mut env, |_| 0.9, 30, None).unwrap();
        out.push(rec);
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let records = sample_records();
        let path = tmp("roundtrip.lsrt");
        save_trajectories(&path, &records).unwrap();
        let loaded = load_trajectories(&path).unwrap();
        assert_eq!(records, loaded);
    }

    #[test]
    fn wrong_magic_rejected() {
        let path = tmp("magic.lsrt");
        fs::write(&path, b"XXXX\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            load_trajectories(&path),
            Err(FormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncation_detected_without_partial_result() {
        let records = sample_records();
        let path = tmp("trunc.lsrt");
        save_trajectories(&path, &records).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_trajectories(&path),
            Err(FormatError::Truncated { .. })
        ));
    }
}
