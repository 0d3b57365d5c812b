//! Persisted reference set of (latent, environment parameters) pairs with
//! kNN retrieval and retrieval/decoder fusion.
//!
//! Similarity is the inner product, which equals cosine on the unit sphere
//! the encoder projects onto. The only index is an exhaustive scan: stores
//! stay small at this scale and exactness matters more than speed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fileio::{BinReader, BinWriter, FormatError};
use crate::terrasim::{TrajectoryRecord, ROBOT_PARAM_RANGES, TERRAIN_COUNT};
use crate::trajcodec::{smoothed_terrain_target, TrajCodec, LATENT_DIM};

pub const STORE_MAGIC: [u8; 4] = *b"LSRS";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store error: {0}")]
    Invalid(String),
    #[error("store is empty")]
    Empty,
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("encoding failed: {0}")]
    Encode(String),
}

/// One reference entry: unit-norm latent plus the environment parameters
/// of the trajectory that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub latent: [f64; LATENT_DIM],
    pub terrain_probs: [f64; TERRAIN_COUNT],
    pub robot_params: [f64; 4],
    pub checkpoint_id: u32,
    pub terrain_id: u8,
    pub difficulty: f64,
}

/// A point estimate of environment parameters (terrain simplex + c_r).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsEstimate {
    pub terrain_probs: [f64; TERRAIN_COUNT],
    pub robot_params: [f64; 4],
}

impl ParamsEstimate {
    pub fn validate(&self) -> Result<(), StoreError> {
        let sum: f64 = self.terrain_probs.iter().sum();
        if self.terrain_probs.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(StoreError::Invalid(format!(
                "terrain estimate is not a simplex (sum {sum})"
            )));
        }
        if self.robot_params.iter().any(|p| !p.is_finite()) {
            return Err(StoreError::Invalid("non-finite robot parameter".into()));
        }
        Ok(())
    }
}

/// Fusion output: convex combination of retrieved and decoded estimates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FusedParams {
    pub estimate: ParamsEstimate,
    pub alpha: f64,
}

/// Immutable reference store (D_z, D_c).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceStore {
    entries: Vec<StoreEntry>,
}

/// Retrieval result: averaged neighbour parameters plus the neighbour ids
/// and their mean difficulty (meta, useful for reconstructing the env).
#[derive(Debug, Clone)]
pub struct Retrieved {
    pub estimate: ParamsEstimate,
    pub neighbor_indices: Vec<usize>,
    pub mean_difficulty: f64,
}

impl ReferenceStore {
    pub fn from_entries(entries: Vec<StoreEntry>) -> Result<Self, StoreError> {
        for (i, e) in entries.iter().enumerate() {
            let norm: f64 = e.latent.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(StoreError::Invalid(format!(
                    "entry {i}: latent norm {norm} != 1"
                )));
            }
            let sum: f64 = e.terrain_probs.iter().sum();
            if e.terrain_probs.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(StoreError::Invalid(format!(
                    "entry {i}: terrain probs are not a simplex"
                )));
            }
        }
        Ok(ReferenceStore { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StoreEntry] {
        &self.entries
    }

    /// Top-N neighbours by inner product, ties broken by lowest index;
    /// parameters averaged without weighting.
    pub fn knn_retrieve(&self, query: &[f64; LATENT_DIM], n: usize) -> Result<Retrieved, StoreError> {
        if self.entries.is_empty() {
            return Err(StoreError::Empty);
        }
        if n == 0 || n > self.entries.len() {
            return Err(StoreError::Invalid(format!(
                "neighbour count {n} outside [1, {}]",
                self.entries.len()
            )));
        }
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let sim: f64 = e.latent.iter().zip(query).map(|(a, b)| a * b).sum();
                (sim, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        scored.truncate(n);

        let mut terrain_probs = [0.0; TERRAIN_COUNT];
        let mut robot_params = [0.0; 4];
        let mut difficulty = 0.0;
        for (_, idx) in &scored {
            let e = &self.entries[*idx];
            for k in 0..TERRAIN_COUNT {
                terrain_probs[k] += e.terrain_probs[k];
            }
            for k in 0..4 {
                robot_params[k] += e.robot_params[k];
            }
            difficulty += e.difficulty;
        }
        let inv = 1.0 / n as f64;
        terrain_probs.iter_mut().for_each(|v| *v *= inv);
        robot_params.iter_mut().for_each(|v| *v *= inv);
        Ok(Retrieved {
            estimate: ParamsEstimate {
                terrain_probs,
                robot_params,
            },
            neighbor_indices: scored.into_iter().map(|(_, i)| i).collect(),
            mean_difficulty: difficulty * inv,
        })
    }
}

/// c = alpha * retrieved + (1 - alpha) * decoded, componentwise. The
/// terrain simplex is renormalized only if numerical drift exceeds 1e-12;
/// robot parameters are clamped to the global ranges.
pub fn fuse(
    retrieved: &ParamsEstimate,
    decoded: &ParamsEstimate,
    alpha: f64,
) -> Result<FusedParams, StoreError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(StoreError::Invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    retrieved.validate()?;
    decoded.validate()?;
    // written as b + alpha (a - b): same convex combination, and exactly
    // a fixed point when both inputs coincide
    let mut terrain_probs = [0.0; TERRAIN_COUNT];
    for k in 0..TERRAIN_COUNT {
        let (a, b) = (retrieved.terrain_probs[k], decoded.terrain_probs[k]);
        terrain_probs[k] = b + alpha * (a - b);
    }
    let sum: f64 = terrain_probs.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        terrain_probs.iter_mut().for_each(|v| *v /= sum);
    }
    let mut robot_params = [0.0; 4];
    for k in 0..4 {
        let (a, b) = (retrieved.robot_params[k], decoded.robot_params[k]);
        let fused = b + alpha * (a - b);
        let (lo, hi) = ROBOT_PARAM_RANGES[k];
        robot_params[k] = fused.clamp(lo, hi);
    }
    Ok(FusedParams {
        estimate: ParamsEstimate {
            terrain_probs,
            robot_params,
        },
        alpha,
    })
}

/// Encode every labeled trajectory and pair it with its parameters.
/// Encoding parallelizes across `LSR_THREADS` workers; entry order always
/// follows the record order.
pub fn build_reference(
    records: &[TrajectoryRecord],
    codec: &TrajCodec,
) -> Result<ReferenceStore, StoreError> {
    for (i, rec) in records.iter().enumerate() {
        if rec.label.is_none() {
            return Err(StoreError::Invalid(format!("record {i} has no labels")));
        }
    }
    let latents = crate::util::parallel_map(records, |rec| codec.encode_mean(rec));
    let mut entries = Vec::with_capacity(records.len());
    for (i, (rec, latent)) in records.iter().zip(latents).enumerate() {
        let label = rec.label.expect("checked above");
        let latent = latent.map_err(|e| StoreError::Encode(format!("record {i}: {e}")))?;
        entries.push(StoreEntry {
            latent,
            terrain_probs: smoothed_terrain_target(label.terrain),
            robot_params: label.robot_params.to_array(),
            checkpoint_id: label.checkpoint_id,
            terrain_id: label.terrain.index() as u8,
            difficulty: label.difficulty,
        });
    }
    ReferenceStore::from_entries(entries)
}

pub fn save_store(path: &Path, store: &ReferenceStore) -> Result<(), FormatError> {
    let mut w = BinWriter::create(path, STORE_MAGIC, STORE_VERSION)?;
    w.put_u32(store.entries.len() as u32)?;
    for e in &store.entries {
        w.put_f64_slice(&e.latent)?;
        w.put_f64_slice(&e.terrain_probs)?;
        w.put_f64_slice(&e.robot_params)?;
        w.put_u32(e.checkpoint_id)?;
        w.put_u8(e.terrain_id)?;
        w.put_f64(e.difficulty)?;
    }
    w.finish()
}

pub fn load_store(path: &Path) -> Result<ReferenceStore, FormatError> {
    let mut r = BinReader::open(path, STORE_MAGIC, STORE_VERSION)?;
    let count = r.get_u32("entry count")?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let z = r.get_f64_vec(LATENT_DIM, "latent")?;
        let ce = r.get_f64_vec(TERRAIN_COUNT, "terrain probs")?;
        let cr = r.get_f64_vec(4, "robot params")?;
        let checkpoint_id = r.get_u32("checkpoint id")?;
        let terrain_id = r.get_u8("terrain id")?;
        let difficulty = r.get_f64("difficulty")?;
        let mut latent = [0.0; LATENT_DIM];
        latent.copy_from_slice(&z);
        let mut terrain_probs = [0.0; TERRAIN_COUNT];
        terrain_probs.copy_from_slice(&ce);
        let mut robot_params = [0.0; 4];
        robot_params.copy_from_slice(&cr);
        entries.push(StoreEntry {
            latent,
            terrain_probs,
            robot_params,
            checkpoint_id,
            terrain_id,
            difficulty,
        });
    }
    r.expect_eof()?;
    Ok(ReferenceStore { entries })
}
