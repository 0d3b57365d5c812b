//! Trajectory encoder stack: transformer encoder to a spherical latent,
//! next-observation reconstruction decoder, supervised contrastive loss
//! over terrain labels, and multi-head parameter decoders.
//!
//! The encoder consumes reward-free trajectories (o_{1:n}, a_{1:n},
//! o_{2:n+1}) as three tokens per timestep and pools per-timestep latents
//! into one 32-dimensional unit vector. Heads decode the terrain simplex
//! and robot parameters from that latent; a kNN store over the same
//! latents provides the retrieval route.

mod train;

pub use train::{staged_loss_and_grads, train_encoder, BatchStats, CodecTrainer, EpochStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numgrad::blocks::{
    affine_layer, attention_block, init_mlp, init_transformer_block, mlp_forward, Activation,
};
use crate::numgrad::{BoundParams, NumError, ParamSet, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::terrasim::{TerrainType, TrajectoryRecord, ROBOT_PARAM_RANGES, TERRAIN_COUNT};

pub const LATENT_DIM: usize = 32;
/// Label-smoothing mass for terrain targets (forward KL needs support
/// everywhere).
pub const SMOOTH_EPS: f64 = 0.05;

const LOG_SIGMA_MIN: f64 = -10.0;
const LOG_SIGMA_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("config error: {0}")]
    Config(String),
    #[error("training aborted: {0}")]
    Diverged(String),
}

/// (1 - eps) * one_hot(terrain) + eps / K.
pub fn smoothed_terrain_target(terrain: TerrainType) -> [f64; TERRAIN_COUNT] {
    let mut out = [SMOOTH_EPS / TERRAIN_COUNT as f64; TERRAIN_COUNT];
    out[terrain.index()] += 1.0 - SMOOTH_EPS;
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub latent_dim: usize,
    pub max_timesteps: usize,
    pub lambda_recon: f64,
    pub lambda_con: f64,
    pub lambda_e: f64,
    pub lambda_r: f64,
    pub beta_kl: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// InfoNCE logit temperature; the written loss has none, so 1.
    pub temperature: f64,
    /// Head KL direction: false = KL(p_e || c_e) as written, true = reversed.
    pub reverse_head_kl: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            layers: 2,
            heads: 4,
            latent_dim: LATENT_DIM,
            max_timesteps: 200,
            lambda_recon: 1.0,
            lambda_con: 0.5,
            lambda_e: 0.5,
            lambda_r: 0.5,
            beta_kl: 1e-3,
            lr: 1e-4,
            batch_size: 32,
            epochs: 3,
            temperature: 1.0,
            reverse_head_kl: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.latent_dim != LATENT_DIM {
            return Err(CodecError::Config(format!(
                "latent_dim is fixed at {LATENT_DIM}, got {}",
                self.latent_dim
            )));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(CodecError::Config(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        for (name, w) in [
            ("lambda_recon", self.lambda_recon),
            ("lambda_con", self.lambda_con),
            ("lambda_e", self.lambda_e),
            ("lambda_r", self.lambda_r),
            ("beta_kl", self.beta_kl),
            ("temperature", self.temperature),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(CodecError::Config(format!("{name} must be >= 0, got {w}")));
            }
        }
        if self.temperature == 0.0 {
            return Err(CodecError::Config("temperature must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(CodecError::Config("batch_size must be >= 2".into()));
        }
        Ok(())
    }
}

/// Encoder output distribution and its spherical sample/mean.
#[derive(Debug, Clone)]
pub struct LatentVar {
    pub mu: [f64; LATENT_DIM],
    pub log_sigma: [f64; LATENT_DIM],
    pub z: [f64; LATENT_DIM],
}

/// How the latent is produced from (mu, log_sigma).
pub enum EncodeMode<'a> {
    /// Deterministic: z = mu / |mu|.
    Inference,
    /// Reparameterized sample with the provided standard-normal draw.
    Sample { noise: &'a [f64; LATENT_DIM] },
}

/// Graph handles produced by one encoder pass.
pub struct EncoderVars {
    pub mu: Var,
    pub log_sigma: Var,
    pub z: Var,
}

/// Trainable codec: transformer encoder, reconstruction decoder, terrain
/// and robot-parameter heads.
#[derive(Debug, Clone)]
pub struct TrajCodec {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

impl TrajCodec {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self, CodecError> {
        config.validate()?;
        let mut rng = Rng::seed_from(seed);
        let mut params = ParamSet::new();
        let d = config.d_model;

        params.insert_affine("enc.embed.obs", 4, d, &mut rng)?;
        params.insert_affine("enc.embed.act", 1, d, &mut rng)?;
        params.insert_affine("enc.embed.nobs", 4, d, &mut rng)?;
        let pos: Vec<f64> = (0..config.max_timesteps * d)
            .map(|_| rng.uniform_in(-0.05, 0.05))
            .collect();
        params.insert("enc.pos", Tensor::new(vec![config.max_timesteps, d], pos)?)?;
        for layer in 0..config.layers {
            init_transformer_block(&mut params, &format!("enc.block{layer}"), d, 4 * d, &mut rng)?;
        }
        params.insert("enc.final_ln.g", Tensor::full(&[d], 1.0))?;
        params.insert("enc.final_ln.b", Tensor::zeros(&[d]))?;
        params.insert_affine("enc.head_mu", d, LATENT_DIM, &mut rng)?;
        params.insert_affine("enc.head_logsigma", d, LATENT_DIM, &mut rng)?;
        // start with a small posterior scale: at sigma ~ 1 the sampled
        // latent is all reparameterization noise and the contrastive and
        // head losses see no signal to shape
        params
            .get_mut("enc.head_logsigma.b")
            .expect("just inserted")
            .values_mut()
            .iter_mut()
            .for_each(|v| *v = -3.0);

        init_mlp(&mut params, "dec.recon", &[LATENT_DIM + 5, 64, 64, 4], &mut rng)?;
        init_mlp(&mut params, "dec.terrain", &[LATENT_DIM, 32, TERRAIN_COUNT], &mut rng)?;
        init_mlp(&mut params, "dec.robot", &[LATENT_DIM, 32, 4], &mut rng)?;

        Ok(TrajCodec { config, params })
    }

    fn check_record(&self, rec: &TrajectoryRecord) -> Result<usize, CodecError> {
        let n = rec.len();
        if n == 0 {
            return Err(CodecError::Config("cannot encode an empty trajectory".into()));
        }
        if n > self.config.max_timesteps {
            return Err(CodecError::Config(format!(
                "trajectory length {n} exceeds max_timesteps {}",
                self.config.max_timesteps
            )));
        }
        if rec.actions.len() != n || rec.next_obs.len() != n {
            return Err(CodecError::Config("trajectory arrays misaligned".into()));
        }
        Ok(n)
    }

    /// Embed a trajectory as 3n tokens: per timestep t the triplet
    /// (o_t, a_t, o_{t+1}), each modality affinely embedded, all three
    /// sharing the timestep-position embedding.
    pub fn tokenize(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        rec: &TrajectoryRecord,
    ) -> Result<Var, CodecError> {
        let n = self.check_record(rec)?;
        let obs = tape.constant(Tensor::new(
            vec![n, 4],
            rec.obs.iter().flatten().copied().collect(),
        )?);
        let act = tape.constant(Tensor::new(vec![n, 1], rec.actions.clone())?);
        let nobs = tape.constant(Tensor::new(
            vec![n, 4],
            rec.next_obs.iter().flatten().copied().collect(),
        )?);

        let o_emb = affine_layer(tape, bound, "enc.embed.obs", obs)?;
        let a_emb = affine_layer(tape, bound, "enc.embed.act", act)?;
        let n_emb = affine_layer(tape, bound, "enc.embed.nobs", nobs)?;

        let steps: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(bound.var("enc.pos"), &steps)?;
        let o_tok = tape.add(o_emb, pos)?;
        let a_tok = tape.add(a_emb, pos)?;
        let n_tok = tape.add(n_emb, pos)?;
        Ok(tape.interleave_rows3(o_tok, a_tok, n_tok)?)
    }

    /// Causal transformer pass; per-timestep latents are read from each
    /// timestep's o_{t+1} token (the last token that saw the whole triple)
    /// and averaged over `pool_steps` (all timesteps when `None`).
    fn pooled_latent_params(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        rec: &TrajectoryRecord,
        pool_steps: Option<usize>,
    ) -> Result<(Var, Var), CodecError> {
        let n = rec.len();
        let mut h = self.tokenize(tape, bound, rec)?;
        for layer in 0..self.config.layers {
            h = attention_block(
                tape,
                bound,
                &format!("enc.block{layer}"),
                h,
                self.config.heads,
                true,
            )?;
        }
        let h = tape.layer_norm(h, bound.var("enc.final_ln.g"), bound.var("enc.final_ln.b"))?;

        let pool_n = pool_steps.unwrap_or(n).min(n).max(1);
        let read_positions: Vec<usize> = (0..pool_n).map(|t| 3 * t + 2).collect();
        let reads = tape.gather_rows(h, &read_positions)?;
        let mu_t = affine_layer(tape, bound, "enc.head_mu", reads)?;
        let ls_t = affine_layer(tape, bound, "enc.head_logsigma", reads)?;
        let mu = tape.mean_over_rows(mu_t)?;
        let ls = tape.mean_over_rows(ls_t)?;
        let ls = tape.clamp(ls, LOG_SIGMA_MIN, LOG_SIGMA_MAX)?;
        Ok((mu, ls))
    }

    /// Full encoder graph: (mu, log_sigma) plus the spherical latent.
    pub fn encode_graph(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        rec: &TrajectoryRecord,
        mode: EncodeMode,
    ) -> Result<EncoderVars, CodecError> {
        let (mu, log_sigma) = self.pooled_latent_params(tape, bound, rec, None)?;
        let pre = match mode {
            EncodeMode::Inference => mu,
            EncodeMode::Sample { noise } => {
                let eps = tape.constant(Tensor::vector(noise.to_vec()));
                let sigma = tape.exp(log_sigma)?;
                let perturbation = tape.mul(sigma, eps)?;
                tape.add(mu, perturbation)?
            }
        };
        let z = tape.l2_normalize_rows(pre)?;
        Ok(EncoderVars { mu, log_sigma, z })
    }

    /// Value-level encode.
    pub fn encode(&self, rec: &TrajectoryRecord, mode: EncodeMode) -> Result<LatentVar, CodecError> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let vars = self.encode_graph(&mut tape, &bound, rec, mode)?;
        let take = |v: Var| {
            let mut out = [0.0; LATENT_DIM];
            out.copy_from_slice(tape.value(v).values());
            out
        };
        Ok(LatentVar {
            mu: take(vars.mu),
            log_sigma: take(vars.log_sigma),
            z: take(vars.z),
        })
    }

    /// Inference-mode latent (normalized mu).
    pub fn encode_mean(&self, rec: &TrajectoryRecord) -> Result<[f64; LATENT_DIM], CodecError> {
        Ok(self.encode(rec, EncodeMode::Inference)?.z)
    }

    /// Inference latent pooled over the first `prefix` timesteps only.
    /// Under causal masking this is invariant to anything after the prefix.
    pub fn encode_prefix_mean(
        &self,
        rec: &TrajectoryRecord,
        prefix: usize,
    ) -> Result<[f64; LATENT_DIM], CodecError> {
        if prefix == 0 || prefix > rec.len() {
            return Err(CodecError::Config(format!(
                "prefix {prefix} outside [1, {}]",
                rec.len()
            )));
        }
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let (mu, _) = self.pooled_latent_params(&mut tape, &bound, rec, Some(prefix))?;
        let z = tape.l2_normalize_rows(mu)?;
        let mut out = [0.0; LATENT_DIM];
        out.copy_from_slice(tape.value(z).values());
        Ok(out)
    }

    /// Reconstruction loss graph for one trajectory: squared error of the
    /// decoded next observation, summed over timesteps and components.
    pub fn recon_loss_graph(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        rec: &TrajectoryRecord,
        z: Var,
    ) -> Result<Var, CodecError> {
        let n = self.check_record(rec)?;
        let z_rows = tape.broadcast_row(z, n)?;
        let obs = tape.constant(Tensor::new(
            vec![n, 4],
            rec.obs.iter().flatten().copied().collect(),
        )?);
        let act = tape.constant(Tensor::new(vec![n, 1], rec.actions.clone())?);
        let dec_in = tape.concat_cols(&[z_rows, obs, act])?;
        let pred = mlp_forward(tape, bound, "dec.recon", dec_in, 3, Activation::Gelu)?;
        let target = tape.constant(Tensor::new(
            vec![n, 4],
            rec.next_obs.iter().flatten().copied().collect(),
        )?);
        let diff = tape.sub(target, pred)?;
        let sq = tape.mul(diff, diff)?;
        Ok(tape.sum(sq)?)
    }

    /// Multi-head decoder graph: terrain simplex and range-scaled robot
    /// parameters from a latent.
    pub fn heads_graph(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        z: Var,
    ) -> Result<(Var, Var), CodecError> {
        let e_logits = mlp_forward(tape, bound, "dec.terrain", z, 2, Activation::Gelu)?;
        let p_e = tape.softmax_rows(e_logits)?;

        let r_raw = mlp_forward(tape, bound, "dec.robot", z, 2, Activation::Gelu)?;
        let squashed = tape.sigmoid(r_raw)?;
        let lo: Vec<f64> = ROBOT_PARAM_RANGES.iter().map(|(lo, _)| *lo).collect();
        let span: Vec<f64> = ROBOT_PARAM_RANGES.iter().map(|(lo, hi)| hi - lo).collect();
        let span_c = tape.constant(Tensor::new(vec![1, 4], span)?);
        let lo_c = tape.constant(Tensor::new(vec![1, 4], lo)?);
        let scaled = tape.mul(squashed, span_c)?;
        let p_r = tape.add(scaled, lo_c)?;
        Ok((p_e, p_r))
    }

    /// Decode parameter estimates from a latent value.
    pub fn decode_params(
        &self,
        z: &[f64; LATENT_DIM],
    ) -> Result<([f64; TERRAIN_COUNT], [f64; 4]), CodecError> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let z_var = tape.constant(Tensor::new(vec![1, LATENT_DIM], z.to_vec())?);
        let (p_e, p_r) = self.heads_graph(&mut tape, &bound, z_var)?;
        let mut terrain = [0.0; TERRAIN_COUNT];
        terrain.copy_from_slice(tape.value(p_e).values());
        let mut robot = [0.0; 4];
        robot.copy_from_slice(tape.value(p_r).values());
        Ok((terrain, robot))
    }
}

/// Head losses: KL of the decoded terrain simplex against the smoothed
/// target (direction per config), and range-normalized absolute error of
/// the decoded robot parameters.
pub fn head_losses_graph(
    tape: &mut Tape,
    p_e: Var,
    p_r: Var,
    terrain_target: &[f64; TERRAIN_COUNT],
    robot_target: &[f64; 4],
    dr_half_widths: &[f64; 4],
    reverse_kl: bool,
) -> Result<(Var, Var), CodecError> {
    if terrain_target.iter().any(|c| *c <= 0.0) {
        return Err(CodecError::Config(
            "terrain target has a zero entry; smoothing required".into(),
        ));
    }
    if dr_half_widths.iter().any(|r| *r <= 0.0) {
        return Err(CodecError::Config(
            "robot loss needs strictly positive DR half-widths".into(),
        ));
    }
    let ln_c: Vec<f64> = terrain_target.iter().map(|c| c.ln()).collect();
    let ln_c = tape.constant(Tensor::new(vec![1, TERRAIN_COUNT], ln_c)?);
    let ln_p = tape.ln(p_e)?;
    let loss_e = if reverse_kl {
        // KL(c_e || p_e)
        let c = tape.constant(Tensor::new(
            vec![1, TERRAIN_COUNT],
            terrain_target.to_vec(),
        )?);
        let diff = tape.sub(ln_c, ln_p)?;
        let w = tape.mul(c, diff)?;
        tape.sum(w)?
    } else {
        // KL(p_e || c_e) as written
        let diff = tape.sub(ln_p, ln_c)?;
        let w = tape.mul(p_e, diff)?;
        tape.sum(w)?
    };

    let target = tape.constant(Tensor::new(vec![1, 4], robot_target.to_vec())?);
    let inv_r: Vec<f64> = dr_half_widths.iter().map(|r| 1.0 / r).collect();
    let inv_r = tape.constant(Tensor::new(vec![1, 4], inv_r)?);
    let diff = tape.sub(p_r, target)?;
    let abs = tape.abs(diff)?;
    let normalized = tape.mul(abs, inv_r)?;
    let total = tape.sum(normalized)?;
    let loss_r = tape.scale(total, 0.25)?;
    Ok((loss_e, loss_r))
}

/// KL(N(mu, sigma) || N(0, 1)) = 1/2 sum(mu^2 + sigma^2 - 1 - 2 log sigma).
pub fn kl_prior_graph(tape: &mut Tape, mu: Var, log_sigma: Var) -> Result<Var, CodecError> {
    let mu2 = tape.mul(mu, mu)?;
    let two_ls = tape.scale(log_sigma, 2.0)?;
    let sig2 = tape.exp(two_ls)?;
    let sum_terms = tape.add(mu2, sig2)?;
    let shifted = tape.add_scalar(sum_terms, -1.0)?;
    let centered = tape.sub(shifted, two_ls)?;
    let total = tape.sum(centered)?;
    Ok(tape.scale(total, 0.5)?)
}

/// Supervised InfoNCE over a matrix of unit latents (rows) with terrain
/// labels: anchors average over in-batch positives; anchors without a
/// positive are skipped. Returns the loss var and whether any anchor had
/// a positive (false means the loss is identically zero and flagged).
pub fn contrastive_loss_graph(
    tape: &mut Tape,
    latents: Var,
    labels: &[usize],
    temperature: f64,
) -> Result<(Var, bool), CodecError> {
    let (n, _) = {
        let t = tape.value(latents);
        let (r, c) = t.dims2();
        (r, c)
    };
    if n < 2 {
        return Err(CodecError::Config("contrastive loss needs a batch of >= 2".into()));
    }
    if labels.len() != n {
        return Err(CodecError::Config("label count mismatch".into()));
    }

    let mut pos_weight = vec![0.0; n * n];
    let mut anchor_weight = vec![0.0; n];
    let mut anchors = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let w = 1.0 / positives.len() as f64;
        for j in positives {
            pos_weight[i * n + j] = w;
        }
        anchor_weight[i] = 1.0;
    }
    if anchors == 0 {
        let zero = tape.constant(Tensor::scalar(0.0));
        return Ok((zero, false));
    }
    anchor_weight.iter_mut().for_each(|w| *w /= anchors as f64);

    let gram = tape.matmul_self_t(latents)?;
    let logits = tape.scale(gram, 1.0 / temperature)?;
    let lse = tape.lse_excl_diag(logits)?;
    let pos_w = tape.constant(Tensor::new(vec![n, n], pos_weight)?);
    let weighted = tape.mul(logits, pos_w)?;
    let pos_mean = tape.row_sums(weighted)?;
    let per_anchor = tape.sub(lse, pos_mean)?;
    let anchor_w = tape.constant(Tensor::vector(anchor_weight));
    let contribs = tape.mul(per_anchor, anchor_w)?;
    Ok((tape.sum(contribs)?, true))
}

/// Value-level contrastive loss (builds a throwaway tape).
pub fn contrastive_loss_value(
    latents: &[[f64; LATENT_DIM]],
    labels: &[usize],
    temperature: f64,
) -> Result<(f64, bool), CodecError> {
    let mut tape = Tape::new();
    let flat: Vec<f64> = latents.iter().flatten().copied().collect();
    let z = tape.constant(Tensor::new(vec![latents.len(), LATENT_DIM], flat)?);
    let (loss, has_positives) = contrastive_loss_graph(&mut tape, z, labels, temperature)?;
    Ok((tape.value(loss).item(), has_positives))
}

/// Single-tape joint loss over a micro-batch, used by the gradient-check
/// harness; training uses the staged equivalent in [`train`].
#[allow(clippy::too_many_arguments)]
pub fn joint_loss_graph(
    codec: &TrajCodec,
    tape: &mut Tape,
    bound: &BoundParams,
    records: &[&TrajectoryRecord],
    noises: &[[f64; LATENT_DIM]],
    dr_half_widths: &[f64; 4],
) -> Result<Var, CodecError> {
    let n = records.len();
    if n < 2 || noises.len() != n {
        return Err(CodecError::Config("joint loss needs >= 2 records with noises".into()));
    }
    let cfg = &codec.config;
    let mut z_vars = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut per_record = Vec::new();
    for (rec, noise) in records.iter().zip(noises) {
        let label = rec
            .label
            .ok_or_else(|| CodecError::Config("joint loss needs labeled records".into()))?;
        let enc = codec.encode_graph(tape, bound, rec, EncodeMode::Sample { noise })?;
        let recon = codec.recon_loss_graph(tape, bound, rec, enc.z)?;
        let (p_e, p_r) = codec.heads_graph(tape, bound, enc.z)?;
        let (loss_e, loss_r) = head_losses_graph(
            tape,
            p_e,
            p_r,
            &smoothed_terrain_target(label.terrain),
            &label.robot_params.to_array(),
            dr_half_widths,
            cfg.reverse_head_kl,
        )?;
        let kl = kl_prior_graph(tape, enc.mu, enc.log_sigma)?;
        z_vars.push(enc.z);
        labels.push(label.terrain.index());
        per_record.push((recon, loss_e, loss_r, kl));
    }
    let z_matrix = tape.concat_rows(&z_vars)?;
    let (con, _) = contrastive_loss_graph(tape, z_matrix, &labels, cfg.temperature)?;

    let inv_n = 1.0 / n as f64;
    let mut total = tape.scale(con, cfg.lambda_con)?;
    for (recon, loss_e, loss_r, kl) in per_record {
        let r = tape.scale(recon, cfg.lambda_recon * inv_n)?;
        let e = tape.scale(loss_e, cfg.lambda_e * inv_n)?;
        let rr = tape.scale(loss_r, cfg.lambda_r * inv_n)?;
        let k = tape.scale(kl, cfg.beta_kl * inv_n)?;
        total = tape.add(total, r)?;
        total = tape.add(total, e)?;
        total = tape.add(total, rr)?;
        total = tape.add(total, k)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
