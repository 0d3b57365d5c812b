//! Actor and critic networks.

use crate::numgrad::blocks::{init_mlp, mlp_forward, Activation};
use crate::numgrad::{BoundParams, NumError, ParamSet, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::terrasim::{Observation, PrivilegedState, OBS_DIM, PRIV_DIM};

use super::PpoError;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HIDDEN: usize = 64;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian-policy actor (observation input) plus privileged critic,
/// held in one parameter set so a checkpoint is a single file.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub params: ParamSet,
}

impl ActorCritic {
    pub fn init(seed: u64) -> Result<Self, NumError> {
        let mut rng = Rng::seed_from(seed);
        let mut params = ParamSet::new();
        init_mlp(&mut params, "pi", &[OBS_DIM, HIDDEN, HIDDEN, 1], &mut rng)?;
        params.insert("pi.log_std", Tensor::new(vec![1, 1], vec![-0.5])?)?;
        init_mlp(&mut params, "vf", &[PRIV_DIM, HIDDEN, HIDDEN, 1], &mut rng)?;
        Ok(ActorCritic { params })
    }

    pub fn from_params(params: ParamSet) -> Self {
        ActorCritic { params }
    }

    /// Action mean [n x 1] and clamped log-std [1 x 1] for a batch of
    /// observations.
    pub fn policy_graph(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        obs: Var,
    ) -> Result<(Var, Var), NumError> {
        let mean = mlp_forward(tape, bound, "pi", obs, 3, Activation::Tanh)?;
        let log_std = tape.clamp(bound.var("pi.log_std"), LOG_STD_MIN, LOG_STD_MAX)?;
        Ok((mean, log_std))
    }

    /// State values [n x 1] from privileged inputs.
    pub fn value_graph(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        privileged: Var,
    ) -> Result<Var, NumError> {
        mlp_forward(tape, bound, "vf", privileged, 3, Activation::Tanh)
    }

    /// Batched policy forward: (means, log_std).
    pub fn policy_forward(&self, obs: &[Observation]) -> Result<(Vec<f64>, f64), PpoError> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let flat: Vec<f64> = obs.iter().flat_map(|o| o.to_array()).collect();
        let x = tape.constant(Tensor::new(vec![obs.len(), OBS_DIM], flat)?);
        let (mean, log_std) = self.policy_graph(&mut tape, &bound, x)?;
        Ok((
            tape.value(mean).values().to_vec(),
            tape.value(log_std).item(),
        ))
    }

    /// Batched critic forward on privileged states.
    pub fn value_forward(&self, privileged: &[[f64; PRIV_DIM]]) -> Result<Vec<f64>, PpoError> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let flat: Vec<f64> = privileged.iter().flatten().copied().collect();
        let x = tape.constant(Tensor::new(vec![privileged.len(), PRIV_DIM], flat)?);
        let v = self.value_graph(&mut tape, &bound, x)?;
        Ok(tape.value(v).values().to_vec())
    }

    /// Critic value of one privileged state.
    pub fn value_one(&self, privileged: &PrivilegedState) -> Result<f64, PpoError> {
        Ok(self.value_forward(&[privileged.values])?[0])
    }

    /// Sample actions for a batch of observations; returns (raw actions,
    /// log-probs under the current Gaussian).
    pub fn act_batch(
        &self,
        obs: &[Observation],
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
        let (means, log_std) = self.policy_forward(obs)?;
        let std = log_std.exp();
        let mut actions = Vec::with_capacity(means.len());
        let mut log_probs = Vec::with_capacity(means.len());
        for mean in &means {
            let eps = rng.normal();
            let action = mean + std * eps;
            log_probs.push(gaussian_log_prob(action, *mean, log_std));
            actions.push(action);
        }
        Ok((actions, log_probs))
    }

    /// Deterministic (mean) action for one observation.
    pub fn act_mean(&self, obs: &Observation) -> Result<f64, PpoError> {
        Ok(self.policy_forward(std::slice::from_ref(obs))?.0[0])
    }
}

pub fn gaussian_log_prob(action: f64, mean: f64, log_std: f64) -> f64 {
    let z = (action - mean) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * LN_2PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actor_sees_observation_critic_sees_privileged() {
        // enforced by input widths: the actor graph rejects privileged-width
        // input and vice versa
        let ac = ActorCritic::init(1).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&ac.params);
        let wide = tape.constant(Tensor::zeros(&[2, PRIV_DIM]));
        assert!(ac.policy_graph(&mut tape, &bound, wide).is_err());
        let narrow = tape.constant(Tensor::zeros(&[2, OBS_DIM]));
        assert!(ac.value_graph(&mut tape, &bound, narrow).is_err());
    }

    #[test]
    fn log_std_stays_in_bounds() {
        let mut ac = ActorCritic::init(2).unwrap();
        ac.params.get_mut("pi.log_std").unwrap().values_mut()[0] = 11.0;
        let obs = Observation {
            velocity: 0.3,
            prev_accel: 0.0,
            prev_action: 0.0,
            contact_flag: 0.0,
        };
        let (_, log_std) = ac.policy_forward(&[obs]).unwrap();
        assert_eq!(log_std, LOG_STD_MAX);
    }

    #[test]
    fn gaussian_log_prob_matches_density() {
        // N(0.2, sigma = e^{-0.5}) evaluated at 0.5
        let lp = gaussian_log_prob(0.5, 0.2, -0.5);
        let sigma: f64 = (-0.5f64).exp();
        let density =
            (-0.5 * (0.3 / sigma) * (0.3 / sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        assert!((lp - density.ln()).abs() < 1e-12);
    }

    #[test]
    fn act_batch_is_seed_deterministic() {
        let ac = ActorCritic::init(3).unwrap();
        let obs: Vec<Observation> = (0..5)
            .map(|i| Observation {
                velocity: i as f64 * 0.2,
                prev_accel: 0.1,
                prev_action: -0.3,
                contact_flag: 0.0,
            })
            .collect();
        let (a1, lp1) = ac.act_batch(&obs, &mut Rng::seed_from(7)).unwrap();
        let (a2, lp2) = ac.act_batch(&obs, &mut Rng::seed_from(7)).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(lp1, lp2);
    }
}
