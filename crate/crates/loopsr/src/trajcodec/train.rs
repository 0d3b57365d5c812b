//! Joint codec training.
//!
//! Each batch runs one encoder/decoder graph per trajectory, couples the
//! resulting latents through the contrastive loss on a small side tape,
//! and injects the contrastive gradient back into every trajectory tape
//! as an extra seed on its latent. Gradients accumulate in batch order,
//! so results are independent of any execution interleaving.

use serde::{Deserialize, Serialize};

use crate::numgrad::{adam_update, AdamConfig, AdamState, Gradients, Tape, Tensor};
use crate::rng::Rng;
use crate::terrasim::TrajectoryRecord;

use super::{
    contrastive_loss_graph, head_losses_graph, kl_prior_graph, smoothed_terrain_target,
    CodecError, EncodeMode, TrajCodec, LATENT_DIM,
};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BatchStats {
    pub total: f64,
    pub recon: f64,
    pub contrastive: f64,
    pub terrain: f64,
    pub robot: f64,
    pub kl: f64,
    /// True when no anchor had an in-batch positive.
    pub contrastive_flagged: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub batches: usize,
    pub total: f64,
    pub recon: f64,
    pub contrastive: f64,
    pub terrain: f64,
    pub robot: f64,
    pub kl: f64,
}

/// Optimizer state persisted across batches (and across the co-scheduled
/// updates during policy pretraining).
pub struct CodecTrainer {
    pub adam: AdamState,
    pub dr_half_widths: [f64; 4],
}

impl CodecTrainer {
    pub fn new(codec: &TrajCodec, dr_half_widths: [f64; 4]) -> Self {
        CodecTrainer {
            adam: AdamState::new(&codec.params, AdamConfig::with_lr(codec.config.lr)),
            dr_half_widths,
        }
    }

    /// One optimizer step on a batch of labeled trajectories.
    pub fn train_batch(
        &mut self,
        codec: &mut TrajCodec,
        batch: &[&TrajectoryRecord],
        noise_rng: &mut Rng,
    ) -> Result<BatchStats, CodecError> {
        let noises: Vec<[f64; LATENT_DIM]> = batch
            .iter()
            .map(|_| {
                let mut noise = [0.0; LATENT_DIM];
                noise.iter_mut().for_each(|v| *v = noise_rng.normal());
                noise
            })
            .collect();
        let (stats, grads) = staged_loss_and_grads(codec, batch, &noises, &self.dr_half_widths)?;
        if !stats.total.is_finite() {
            return Err(CodecError::Diverged(format!(
                "non-finite batch loss: {stats:?}"
            )));
        }
        adam_update(&mut codec.params, &grads, &mut self.adam)?;
        Ok(stats)
    }
}

/// Batch loss and parameter gradients via the staged (per-trajectory tape
/// plus contrastive side tape) assembly. Mathematically identical to the
/// single-tape [`super::joint_loss_graph`]; tested against it.
pub fn staged_loss_and_grads(
    codec: &TrajCodec,
    batch: &[&TrajectoryRecord],
    noises: &[[f64; LATENT_DIM]],
    dr_half_widths: &[f64; 4],
) -> Result<(BatchStats, Gradients), CodecError> {
    let n = batch.len();
    if n < 2 || noises.len() != n {
        return Err(CodecError::Config("batch must hold >= 2 trajectories".into()));
    }
    let cfg = &codec.config;
    let inv_n = 1.0 / n as f64;

    // stage A: per-trajectory graphs (kept alive for the reverse pass)
    let mut tapes = Vec::with_capacity(n);
    let mut handles = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut z_values = Vec::with_capacity(n);
    let mut stats = BatchStats {
        total: 0.0,
        recon: 0.0,
        contrastive: 0.0,
        terrain: 0.0,
        robot: 0.0,
        kl: 0.0,
        contrastive_flagged: false,
    };
    for (rec, noise) in batch.iter().zip(noises) {
        let label = rec
            .label
            .ok_or_else(|| CodecError::Config("training requires labeled records".into()))?;
        let mut tape = Tape::new();
        let bound = tape.bind(&codec.params);
        let enc = codec.encode_graph(&mut tape, &bound, rec, EncodeMode::Sample { noise })?;
        let recon = codec.recon_loss_graph(&mut tape, &bound, rec, enc.z)?;
        let (p_e, p_r) = codec.heads_graph(&mut tape, &bound, enc.z)?;
        let (loss_e, loss_r) = head_losses_graph(
            &mut tape,
            p_e,
            p_r,
            &smoothed_terrain_target(label.terrain),
            &label.robot_params.to_array(),
            dr_half_widths,
            cfg.reverse_head_kl,
        )?;
        let kl = kl_prior_graph(&mut tape, enc.mu, enc.log_sigma)?;

        stats.recon += tape.value(recon).item() * inv_n;
        stats.terrain += tape.value(loss_e).item() * inv_n;
        stats.robot += tape.value(loss_r).item() * inv_n;
        stats.kl += tape.value(kl).item() * inv_n;
        let mut z = [0.0; LATENT_DIM];
        z.copy_from_slice(tape.value(enc.z).values());
        z_values.push(z);
        labels.push(label.terrain.index());
        handles.push((enc.z, recon, loss_e, loss_r, kl));
        tapes.push(tape);
    }

    // stage B: contrastive coupling over the batch latents
    let mut side = Tape::new();
    let flat: Vec<f64> = z_values.iter().flatten().copied().collect();
    let z_matrix = side.constant(Tensor::new(vec![n, LATENT_DIM], flat)?);
    let (con, has_positives) =
        contrastive_loss_graph(&mut side, z_matrix, &labels, cfg.temperature)?;
    stats.contrastive = side.value(con).item();
    stats.contrastive_flagged = !has_positives;
    let z_grads = if has_positives {
        let side_grads = side.backward(con)?;
        Some(side_grads.of(&side, z_matrix))
    } else {
        None
    };

    // stage C: per-trajectory reverse passes with injected seeds
    let mut total_grads = Gradients::default();
    for (i, (tape, (z, recon, loss_e, loss_r, kl))) in
        tapes.iter().zip(handles.iter()).enumerate()
    {
        let mut seeds = vec![
            (*recon, Tensor::scalar(cfg.lambda_recon * inv_n)),
            (*loss_e, Tensor::scalar(cfg.lambda_e * inv_n)),
            (*loss_r, Tensor::scalar(cfg.lambda_r * inv_n)),
            (*kl, Tensor::scalar(cfg.beta_kl * inv_n)),
        ];
        if let Some(zg) = &z_grads {
            let row: Vec<f64> = zg.values()[i * LATENT_DIM..(i + 1) * LATENT_DIM]
                .iter()
                .map(|v| v * cfg.lambda_con)
                .collect();
            seeds.push((*z, Tensor::new(vec![1, LATENT_DIM], row)?));
        }
        let tape_grads = tape.backward_seeded(&seeds)?;
        total_grads.accumulate(&tape.param_grads(&tape_grads, &codec.params));
    }

    stats.total = cfg.lambda_recon * stats.recon
        + cfg.lambda_con * stats.contrastive
        + cfg.lambda_e * stats.terrain
        + cfg.lambda_r * stats.robot
        + cfg.beta_kl * stats.kl;
    Ok((stats, total_grads))
}

/// Epoch-based training over a labeled dataset: seeded shuffling, batches
/// of `config.batch_size` (a trailing batch of fewer than 2 records is
/// dropped), per-epoch loss records returned for the metrics log.
pub fn train_encoder(
    codec: &mut TrajCodec,
    records: &[TrajectoryRecord],
    dr_half_widths: [f64; 4],
    seed: u64,
) -> Result<Vec<EpochStats>, CodecError> {
    let labeled: Vec<&TrajectoryRecord> = records.iter().filter(|r| r.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(CodecError::Config("dataset holds no labeled trajectories".into()));
    }
    if labeled.len() < 2 {
        return Err(CodecError::Config("need at least 2 labeled trajectories".into()));
    }
    let mut trainer = CodecTrainer::new(codec, dr_half_widths);
    let mut shuffle_rng = Rng::seed_from(seed);
    let mut noise_rng = Rng::seed_from(seed ^ 0x9e37_79b9);
    let batch_size = codec.config.batch_size;
    let epochs = codec.config.epochs;

    let mut out = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let order = shuffle_rng.permutation(labeled.len());
        let mut acc = EpochStats {
            epoch,
            batches: 0,
            total: 0.0,
            recon: 0.0,
            contrastive: 0.0,
            terrain: 0.0,
            robot: 0.0,
            kl: 0.0,
        };
        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&TrajectoryRecord> = chunk.iter().map(|&i| labeled[i]).collect();
            let stats = trainer.train_batch(codec, &batch, &mut noise_rng)?;
            acc.batches += 1;
            acc.total += stats.total;
            acc.recon += stats.recon;
            acc.contrastive += stats.contrastive;
            acc.terrain += stats.terrain;
            acc.robot += stats.robot;
            acc.kl += stats.kl;
        }
        if acc.batches > 0 {
            let inv = 1.0 / acc.batches as f64;
            acc.total *= inv;
            acc.recon *= inv;
            acc.contrastive *= inv;
            acc.terrain *= inv;
            acc.robot *= inv;
            acc.kl *= inv;
        }
        out.push(acc);
    }
    Ok(out)
}
