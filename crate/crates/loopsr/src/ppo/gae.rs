//! Generalized advantage estimation.

use super::PpoError;

/// Standard GAE recursion over one env's step sequence.
///
/// `values` holds T+1 entries (the last one bootstraps past the window);
/// `dones[t] = 1` cuts both the bootstrap and the recursion at t.
/// Returns raw (un-normalized) advantages and the value targets A + V.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[f64],
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let t_len = rewards.len();
    if values.len() != t_len + 1 || dones.len() != t_len {
        return Err(PpoError::Config(format!(
            "gae: rewards {t_len}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lam) {
        return Err(PpoError::Config("gae: gamma and lam must lie in [0, 1]".into()));
    }
    let mut advantages = vec![0.0; t_len];
    let mut carry = 0.0;
    for t in (0..t_len).rev() {
        let not_done = 1.0 - dones[t];
        let delta = rewards[t] + gamma * values[t + 1] * not_done - values[t];
        carry = delta + gamma * lam * not_done * carry;
        advantages[t] = carry;
    }
    let returns: Vec<f64> = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// In-place normalization to zero mean, unit variance (the form PPO
/// consumes). A near-constant batch is left centered but unscaled.
pub fn normalize_advantages(advantages: &mut [f64]) {
    let n = advantages.len().max(1) as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-12 {
        for a in advantages.iter_mut() {
            *a = (*a - mean) / std;
        }
    } else {
        for a in advantages.iter_mut() {
            *a -= mean;
        }
    }
}
