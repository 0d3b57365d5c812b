//! Bias-corrected Adam.

use super::params::{Gradients, ParamSet};
use super::{NumError, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// Per-parameter first/second moments plus step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<(String, Tensor)>,
    second: Vec<(String, Tensor)>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let first = params
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
            .collect();
        let second = params
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
            .collect();
        AdamState {
            config,
            step: 0,
            first,
            second,
        }
    }
}

/// One bias-corrected Adam step in place.
pub fn adam_update(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<(), NumError> {
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for (i, (name, p)) in params.iter_mut().enumerate() {
        let g = grads
            .get(name)
            .ok_or_else(|| NumError::Config(format!("missing gradient for {name}")))?;
        if g.shape() != p.shape() {
            return Err(NumError::BadShape(format!(
                "adam: grad {:?} vs param {:?} for {name}",
                g.shape(),
                p.shape()
            )));
        }
        let (mname, m) = &mut state.first[i];
        debug_assert_eq!(mname, name);
        let (_, v) = &mut state.second[i];
        let pv = p.values_mut();
        let mv = m.values_mut();
        let vv = v.values_mut();
        for j in 0..pv.len() {
            let gj = g.values()[j];
            mv[j] = beta1 * mv[j] + (1.0 - beta1) * gj;
            vv[j] = beta2 * vv[j] + (1.0 - beta2) * gj * gj;
            let mhat = mv[j] / bc1;
            let vhat = vv[j] / bc2;
            pv[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
