//! Tabular verifier for the value-discrepancy analysis.
//!
//! Computes exact optimal values on finite MDP pairs, checks the
//! Bellman-expansion identity that splits Q* - Q*_R into reward, policy
//! and transition terms, and evaluates the associated upper bound. The
//! identity is asserted; the final inequality is measured and reported.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

/// Finite MDP with row-stochastic transitions.
///
/// `transitions[s * A * S + a * S + s']`, `rewards[s * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
}

pub const ROW_STOCHASTIC_TOL: f64 = 1e-12;

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let mdp = TabularMdp {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
            initial_dist,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Construct without validation (used to reproduce dumped failures).
    pub fn new_unchecked(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Self {
        TabularMdp {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
            initial_dist,
        }
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return Err(MdpError::Config("empty state or action space".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(MdpError::Config(format!("gamma {} not in [0, 1)", self.gamma)));
        }
        if self.transitions.len() != s * a * s {
            return Err(MdpError::Config("transition tensor size mismatch".into()));
        }
        if self.rewards.len() != s * a {
            return Err(MdpError::Config("reward table size mismatch".into()));
        }
        if self.initial_dist.len() != s {
            return Err(MdpError::Config("initial distribution size mismatch".into()));
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(MdpError::Config("non-finite reward".into()));
        }
        for si in 0..s {
            for ai in 0..a {
                let row = self.transition_row(si, ai);
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(MdpError::Config(format!(
                        "negative or non-finite transition prob at ({si}, {ai})"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_STOCHASTIC_TOL {
                    return Err(MdpError::Config(format!(
                        "transition row ({si}, {ai}) sums to {sum}, not 1 within {ROW_STOCHASTIC_TOL}"
                    )));
                }
            }
        }
        let mu_sum: f64 = self.initial_dist.iter().sum();
        if self.initial_dist.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (mu_sum - 1.0).abs() > 1e-9
        {
            return Err(MdpError::Config("initial distribution is not a simplex".into()));
        }
        Ok(())
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = s * self.n_actions * self.n_states + a * self.n_states;
        &self.transitions[base..base + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn r_max(&self) -> f64 {
        self.rewards.iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }
}

/// Result of value iteration: Q table plus convergence trace.
#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    /// Q[s * A + a].
    pub q: Vec<f64>,
    pub sweeps: usize,
    pub residual_history: Vec<f64>,
}

impl ValueIterationResult {
    pub fn v_star(&self, n_states: usize, n_actions: usize) -> Vec<f64> {
        (0..n_states)
            .map(|s| {
                (0..n_actions)
                    .map(|a| self.q[s * n_actions + a])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

/// Value iteration until the sup-norm Bellman residual drops below
/// tol * (1 - gamma) / gamma, which guarantees sup|Q - Q*| < tol.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<ValueIterationResult, MdpError> {
    if tol <= 0.0 {
        return Err(MdpError::Config("tolerance must be positive".into()));
    }
    if mdp.gamma >= 1.0 {
        return Err(MdpError::Config("value iteration needs gamma < 1".into()));
    }
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let threshold = if mdp.gamma > 0.0 {
        tol * (1.0 - mdp.gamma) / mdp.gamma
    } else {
        f64::INFINITY
    };

    let mut q = vec![0.0; s_n * a_n];
    let mut residual_history = Vec::new();
    // residual can stall at the floating-point fixed point before a very
    // tight threshold is met; stop once it no longer improves
    let mut best = f64::INFINITY;
    let mut stagnant = 0usize;
    for sweep in 0..200_000 {
        let v: Vec<f64> = (0..s_n)
            .map(|s| {
                (0..a_n)
                    .map(|a| q[s * a_n + a])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let mut next = vec![0.0; s_n * a_n];
        let mut residual = 0.0f64;
        for s in 0..s_n {
            for a in 0..a_n {
                let row = mdp.transition_row(s, a);
                let mut exp_v = 0.0;
                for (sp, p) in row.iter().enumerate() {
                    exp_v += p * v[sp];
                }
                let backed_up = mdp.reward(s, a) + mdp.gamma * exp_v;
                residual = residual.max((backed_up - q[s * a_n + a]).abs());
                next[s * a_n + a] = backed_up;
            }
        }
        q = next;
        residual_history.push(residual);
        if residual < threshold || (sweep == 0 && mdp.gamma == 0.0) {
            return Ok(ValueIterationResult {
                q,
                sweeps: sweep + 1,
                residual_history,
            });
        }
        if residual < best {
            best = residual;
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= 50 {
                // converged to the float fixed point
                return Ok(ValueIterationResult {
                    q,
                    sweeps: sweep + 1,
                    residual_history,
                });
            }
        }
        if !residual.is_finite() {
            return Err(MdpError::Numerical(format!(
                "value iteration diverged at sweep {sweep} (residual {residual})"
            )));
        }
    }
    Err(MdpError::Numerical("value iteration failed to converge".into()))
}

/// Total variation distance between two distributions on the same support.
pub fn tv(p: &[f64], q: &[f64]) -> Result<f64, MdpError> {
    if p.len() != q.len() {
        return Err(MdpError::Config(format!(
            "tv: length mismatch {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Greedy deterministic policy from a Q table, ties to the lowest action.
pub fn greedy_policy(q: &[f64], n_states: usize, n_actions: usize) -> Vec<usize> {
    (0..n_states)
        .map(|s| {
            let mut best_a = 0;
            let mut best_q = q[s * n_actions];
            for a in 1..n_actions {
                if q[s * n_actions + a] > best_q {
                    best_q = q[s * n_actions + a];
                    best_a = a;
                }
            }
            best_a
        })
        .collect()
}

/// Normalized discounted state occupancy of a deterministic policy, by
/// linear solve of (I - gamma P_pi^T) rho = (1 - gamma) mu0.
pub fn occupancy(mdp: &TabularMdp, policy: &[usize], mu0: &[f64]) -> Result<Vec<f64>, MdpError> {
    let n = mdp.n_states;
    if policy.len() != n || mu0.len() != n {
        return Err(MdpError::Config("occupancy: policy or mu0 length mismatch".into()));
    }
    if policy.iter().any(|&a| a >= mdp.n_actions) {
        return Err(MdpError::Config("occupancy: action index out of range".into()));
    }
    let mut a = vec![0.0; n * n];
    for s in 0..n {
        let row = mdp.transition_row(s, policy[s]);
        for sp in 0..n {
            // transpose: coefficient of rho[s] in the equation for rho[sp]
            a[sp * n + s] -= mdp.gamma * row[sp];
        }
    }
    for s in 0..n {
        a[s * n + s] += 1.0;
    }
    let b: Vec<f64> = mu0.iter().map(|m| (1.0 - mdp.gamma) * m).collect();
    solve_linear(a, b, n)
}

/// Dense linear solve with partial pivoting.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>, MdpError> {
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-14 {
            return Err(MdpError::Numerical("singular linear system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// All terms of the value-discrepancy decomposition for one MDP pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub n_states: usize,
    pub n_actions: usize,
    /// Q* of the training MDP, flattened [s * A + a].
    pub q_train: Vec<f64>,
    /// Q*_R of the testing MDP.
    pub q_test: Vec<f64>,
    /// V*_R of the testing MDP.
    pub v_test: Vec<f64>,
    /// Reward gap r - r^R per (s, a).
    pub delta_r: Vec<f64>,
    /// Total policy discrepancy term per (s, a).
    pub term_policy: Vec<f64>,
    /// Transition discrepancy term per (s, a).
    pub term_transition: Vec<f64>,
    /// Identity residual per (s, a); must vanish.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// Greedy-policy total-variation gap, sup over states.
    pub eps_pi: f64,
    /// Occupancy total-variation gap under the test-optimal policy.
    pub eps_rho: f64,
    /// sup_(s,a) |Q* - Q*_R|.
    pub lhs_sup: f64,
    /// Upper-bound value and its three summands.
    pub rhs_bound: f64,
    pub rhs_terms: [f64; 3],
    pub bound_holds: bool,
}

const VI_TOL: f64 = 1e-12;

/// Decompose Q* - Q*_R into reward / policy / transition terms and verify
/// the expansion is exact per (s, a).
pub fn decompose(train: &TabularMdp, test: &TabularMdp) -> Result<DiscrepancyReport, MdpError> {
    if train.n_states != test.n_states || train.n_actions != test.n_actions {
        return Err(MdpError::Config("decompose: mismatched state/action spaces".into()));
    }
    if train.gamma != test.gamma {
        return Err(MdpError::Config("decompose: discount factors differ".into()));
    }
    let (s_n, a_n) = (train.n_states, train.n_actions);
    let gamma = train.gamma;

    let vi_train = value_iteration(train, VI_TOL)?;
    let vi_test = value_iteration(test, VI_TOL)?;
    let v_train = vi_train.v_star(s_n, a_n);
    let v_test = vi_test.v_star(s_n, a_n);

    let mut delta_r = vec![0.0; s_n * a_n];
    let mut term_policy = vec![0.0; s_n * a_n];
    let mut term_transition = vec![0.0; s_n * a_n];
    let mut residuals = vec![0.0; s_n * a_n];
    let mut lhs_sup = 0.0f64;
    for s in 0..s_n {
        for a in 0..a_n {
            let i = s * a_n + a;
            delta_r[i] = train.reward(s, a) - test.reward(s, a);
            let p_row = train.transition_row(s, a);
            let pr_row = test.transition_row(s, a);
            let mut policy_term = 0.0;
            let mut transition_term = 0.0;
            for sp in 0..s_n {
                policy_term += p_row[sp] * (v_train[sp] - v_test[sp]);
                transition_term += (p_row[sp] - pr_row[sp]) * v_test[sp];
            }
            term_policy[i] = gamma * policy_term;
            term_transition[i] = gamma * transition_term;
            let gap = vi_train.q[i] - vi_test.q[i];
            residuals[i] = gap - (delta_r[i] + term_policy[i] + term_transition[i]);
            lhs_sup = lhs_sup.max(gap.abs());
        }
    }
    let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));

    let greedy_train = greedy_policy(&vi_train.q, s_n, a_n);
    let greedy_test = greedy_policy(&vi_test.q, s_n, a_n);
    let mut eps_pi = 0.0f64;
    for s in 0..s_n {
        let mut p = vec![0.0; a_n];
        let mut q = vec![0.0; a_n];
        p[greedy_train[s]] = 1.0;
        q[greedy_test[s]] = 1.0;
        eps_pi = eps_pi.max(tv(&p, &q)?);
    }

    // occupancy shift measured under the test-optimal policy from the
    // training MDP's initial distribution
    let rho_train = occupancy(train, &greedy_test, &train.initial_dist)?;
    let rho_test = occupancy(test, &greedy_test, &train.initial_dist)?;
    let eps_rho = tv(&rho_train, &rho_test)?;

    let sup_delta_r = delta_r.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let r_max = train.r_max().max(test.r_max());
    let v_test_max = v_test.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let one_minus = 1.0 - gamma;
    let rhs_terms = [
        sup_delta_r / one_minus,
        2.0 * gamma * r_max / (one_minus * one_minus) * eps_pi,
        gamma / one_minus * v_test_max * eps_rho,
    ];
    let rhs_bound = rhs_terms.iter().sum();

    Ok(DiscrepancyReport {
        n_states: s_n,
        n_actions: a_n,
        q_train: vi_train.q,
        q_test: vi_test.q,
        v_test,
        delta_r,
        term_policy,
        term_transition,
        residuals,
        max_residual,
        eps_pi,
        eps_rho,
        lhs_sup,
        rhs_bound,
        rhs_terms,
        bound_holds: lhs_sup <= rhs_bound,
    })
}

/// The bound's right-hand side alongside the exact left-hand side.
pub fn bound_rhs(train: &TabularMdp, test: &TabularMdp) -> Result<(f64, f64), MdpError> {
    let report = decompose(train, test)?;
    Ok((report.rhs_bound, report.lhs_sup))
}

/// Random row-stochastic MDP (Dirichlet(1) rows).
pub fn random_mdp(
    rng: &mut Rng,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> TabularMdp {
    let mut transitions = vec![0.0; n_states * n_actions * n_states];
    for row in transitions.chunks_mut(n_states) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = -rng.uniform().max(1e-12).ln();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        // re-normalize exactly: force the largest entry to absorb roundoff
        let total: f64 = row.iter().sum();
        let imax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        row[imax] += 1.0 - total;
    }
    let rewards: Vec<f64> = (0..n_states * n_actions)
        .map(|_| rng.uniform_in(-1.0, 1.0))
        .collect();
    let mut initial_dist: Vec<f64> = (0..n_states)
        .map(|_| -rng.uniform().max(1e-12).ln())
        .collect();
    let s: f64 = initial_dist.iter().sum();
    for v in initial_dist.iter_mut() {
        *v /= s;
    }
    TabularMdp::new_unchecked(n_states, n_actions, transitions, rewards, gamma, initial_dist)
}

/// Random pair sharing dimensions, discount, and initial distribution.
pub fn random_mdp_pair(rng: &mut Rng, max_states: usize, max_actions: usize) -> (TabularMdp, TabularMdp) {
    let n_states = 2 + rng.below(max_states.saturating_sub(1));
    let n_actions = 2 + rng.below(max_actions.saturating_sub(1));
    let gamma = rng.uniform_in(0.5, 0.99);
    let train = random_mdp(rng, n_states, n_actions, gamma);
    let mut test = random_mdp(rng, n_states, n_actions, gamma);
    test.initial_dist = train.initial_dist.clone();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state_mdp(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![reward], gamma, vec![1.0]).unwrap()
    }

    #[test]
    fn geometric_series_value() {
        let mdp = single_state_mdp(1.0, 0.9);
        let vi = value_iteration(&mdp, 1e-10).unwrap();
        assert!((vi.q[0] - 10.0).abs() < 1e-9, "q = {}", vi.q[0]);
    }

    #[test]
    fn zero_rewards_zero_values() {
        let mut rng = Rng::seed_from(3);
        let mut mdp = random_mdp(&mut rng, 4, 3, 0.85);
        mdp.rewards.iter_mut().for_each(|r| *r = 0.0);
        let vi = value_iteration(&mdp, 1e-10).unwrap();
        assert!(vi.q.iter().all(|q| q.abs() < 1e-12));
    }

    #[test]
    fn gamma_one_rejected() {
        let mdp = TabularMdp::new_unchecked(1, 1, vec![1.0], vec![1.0], 1.0, vec![1.0]);
        assert!(matches!(value_iteration(&mdp, 1e-8), Err(MdpError::Config(_))));
        assert!(mdp.validate().is_err());
    }

    #[test]
    fn bellman_residual_strictly_decreases() {
        let mut rng = Rng::seed_from(4);
        let mdp = random_mdp(&mut rng, 6, 3, 0.9);
        let vi = value_iteration(&mdp, 1e-10).unwrap();
        for w in vi.residual_history.windows(2) {
            if w[0] > 1e-13 {
                assert!(w[1] < w[0], "residual did not decrease: {} -> {}", w[0], w[1]);
            }
        }
    }

    /// Evaluate a deterministic policy exactly via linear solve.
    fn policy_value(mdp: &TabularMdp, policy: &[usize]) -> Vec<f64> {
        let n = mdp.n_states;
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        for s in 0..n {
            let row = mdp.transition_row(s, policy[s]);
            for sp in 0..n {
                a[s * n + sp] = -mdp.gamma * row[sp];
            }
            a[s * n + s] += 1.0;
            b[s] = mdp.reward(s, policy[s]);
        }
        solve_linear(a, b, n).unwrap()
    }

    #[test]
    fn value_iteration_matches_policy_enumeration_on_two_state_mdps() {
        // oracle: evaluate every deterministic policy by linear solve and
        // take the pointwise max
        let mut rng = Rng::seed_from(5);
        for trial in 0..25 {
            let gamma = rng.uniform_in(0.5, 0.99);
            let mdp = random_mdp(&mut rng, 2, 2, gamma);
            let vi = value_iteration(&mdp, 1e-12).unwrap();

            let mut v_best = vec![f64::NEG_INFINITY; 2];
            for a0 in 0..2 {
                for a1 in 0..2 {
                    let v = policy_value(&mdp, &[a0, a1]);
                    for s in 0..2 {
                        v_best[s] = v_best[s].max(v[s]);
                    }
                }
            }
            let v_vi = vi.v_star(2, 2);
            for s in 0..2 {
                assert!(
                    (v_vi[s] - v_best[s]).abs() < 1e-8,
                    "trial {trial}: state {s}: {} vs {}",
                    v_vi[s],
                    v_best[s]
                );
            }
        }
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv(&[0.5, 0.5], &[0.75, 0.25]).unwrap() - 0.25).abs() < 1e-15);
        assert!(tv(&[0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn occupancy_single_state_is_one() {
        let mdp = single_state_mdp(0.0, 0.8);
        let rho = occupancy(&mdp, &[0], &[1.0]).unwrap();
        assert!((rho[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_gamma_zero_returns_initial_dist() {
        let mut rng = Rng::seed_from(6);
        let mdp = random_mdp(&mut rng, 5, 2, 0.0);
        let mu0 = mdp.initial_dist.clone();
        let rho = occupancy(&mdp, &[0, 1, 0, 1, 0], &mu0).unwrap();
        for (r, m) in rho.iter().zip(mu0.iter()) {
            assert!((r - m).abs() < 1e-12);
        }
    }

    #[test]
    fn occupancy_sums_to_one() {
        let mut rng = Rng::seed_from(7);
        for _ in 0..20 {
            let n_states = 2 + rng.below(8);
            let n_actions = 2 + rng.below(3);
            let gamma = rng.uniform_in(0.5, 0.99);
            let mdp = random_mdp(&mut rng, n_states, n_actions, gamma);
            let policy: Vec<usize> = (0..mdp.n_states).map(|_| rng.below(mdp.n_actions)).collect();
            let rho = occupancy(&mdp, &policy, &mdp.initial_dist.clone()).unwrap();
            let sum: f64 = rho.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10, "sum {sum}");
        }
    }

    #[test]
    fn occupancy_matches_monte_carlo_on_chain() {
        // 3-state chain; MC oracle: geometric-horizon terminal-state draws
        let gamma = 0.9;
        let transitions = vec![
            // action 0 from each state: mostly advance, some stay
            0.2, 0.8, 0.0, //
            0.0, 0.2, 0.8, //
            0.5, 0.0, 0.5,
        ];
        let mdp = TabularMdp::new(3, 1, transitions, vec![0.0; 3], gamma, vec![1.0, 0.0, 0.0])
            .unwrap();
        let rho = occupancy(&mdp, &[0, 0, 0], &[1.0, 0.0, 0.0]).unwrap();

        let mut rng = Rng::seed_from(8);
        let draws = 1_000_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            let mut s = 0usize;
            // advance while the discount "survives"
            while rng.uniform() < gamma {
                let row = mdp.transition_row(s, 0);
                s = rng.categorical(row);
            }
            counts[s] += 1;
        }
        for s in 0..3 {
            let estimate = counts[s] as f64 / draws as f64;
            let sigma = (rho[s] * (1.0 - rho[s]) / draws as f64).sqrt();
            assert!(
                (estimate - rho[s]).abs() < 3.0 * sigma + 1e-9,
                "state {s}: mc {estimate} vs exact {} (sigma {sigma})",
                rho[s]
            );
        }
    }

    #[test]
    fn identical_pair_decomposes_to_zero() {
        let mut rng = Rng::seed_from(9);
        let mdp = random_mdp(&mut rng, 5, 3, 0.9);
        let report = decompose(&mdp, &mdp).unwrap();
        assert!(report.max_residual < 1e-12);
        assert_eq!(report.eps_pi, 0.0);
        assert!(report.eps_rho < 1e-12);
        assert!(report.lhs_sup < 1e-9);
        assert!(report.rhs_bound < 1e-9);
    }

    #[test]
    fn constant_reward_shift_gives_closed_form_gap() {
        let mut rng = Rng::seed_from(10);
        let train = random_mdp(&mut rng, 4, 3, 0.9);
        let delta = 0.25;
        let mut test = train.clone();
        test.rewards.iter_mut().for_each(|r| *r -= delta);
        let report = decompose(&train, &test).unwrap();
        let expected = delta / (1.0 - 0.9);
        for i in 0..report.q_train.len() {
            assert!(
                (report.q_train[i] - report.q_test[i] - expected).abs() < 1e-7,
                "gap {} vs {expected}",
                report.q_train[i] - report.q_test[i]
            );
        }
        // argmax is shift-invariant
        assert_eq!(report.eps_pi, 0.0);
        assert!(report.max_residual < 1e-9);
        // first bound term alone is tight here
        assert!(report.rhs_bound >= expected - 1e-9);
        assert!((report.rhs_terms[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn identity_residual_vanishes_on_random_pairs() {
        let mut rng = Rng::seed_from(11);
        for trial in 0..30 {
            let (train, test) = random_mdp_pair(&mut rng, 10, 5);
            let report = decompose(&train, &test).unwrap();
            assert!(
                report.max_residual < 1e-9,
                "trial {trial}: residual {}",
                report.max_residual
            );
            assert!(report.eps_pi >= 0.0 && report.eps_pi <= 1.0);
            assert!(report.eps_rho >= 0.0 && report.eps_rho <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn mismatched_spaces_rejected() {
        let mut rng = Rng::seed_from(12);
        let a = random_mdp(&mut rng, 3, 2, 0.9);
        let b = random_mdp(&mut rng, 4, 2, 0.9);
        assert!(decompose(&a, &b).is_err());
    }
}
