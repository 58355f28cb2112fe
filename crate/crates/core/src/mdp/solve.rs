use nalgebra::{DMatrix, DVector};

use super::{FiniteMdp, OccupancyMeasure, OccupancyMode, Policy, ValueTable};
use crate::error::{Error, Result};

/// Two action values closer than this (relative to their magnitude) are a tie,
/// resolved toward the lower action index.
const TIE_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 10_000_000;

fn greedy_action(q: impl Iterator<Item = f64>) -> (usize, f64) {
    let q: Vec<f64> = q.collect();
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOL * (1.0 + best.abs());
    let a = q.iter().position(|v| *v >= best - tol).unwrap_or(0);
    (a, best)
}

/// Backward induction `V_h(s) = max_a r(s,a) + gamma * sum_s' p(s'|s,a) V_{h+1}(s')`
/// with `V_H = 0`. Returns `V_0..=V_H` and the greedy per-stage policy.
pub fn value_iteration_finite(mdp: &FiniteMdp, horizon: usize) -> Result<(ValueTable, Policy)> {
    mdp.validate()?;
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let mut values = vec![vec![0.0; s_n]; horizon + 1];
    let mut stages = vec![Policy::Deterministic(vec![0; s_n]); horizon.max(1)];
    for h in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(h + 1);
        let next = &tail[0];
        let mut actions = vec![0; s_n];
        for s in 0..s_n {
            let (a, v) = greedy_action((0..a_n).map(|a| mdp.backup(s, a, next)));
            head[h][s] = v;
            actions[s] = a;
        }
        stages[h] = Policy::Deterministic(actions);
    }
    Ok((ValueTable::FiniteHorizon(values), Policy::NonStationary(stages)))
}

/// Result of a traced discounted value-iteration run.
#[derive(Debug, Clone)]
pub struct DiscountedTrace {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
}

/// Discounted value iteration, stopping once a sweep changes values by at most
/// `tol * (1 - gamma) / gamma` in sup norm, which puts the result within `tol`
/// of `V*`.
pub fn value_iteration_discounted(mdp: &FiniteMdp, tol: f64) -> Result<(ValueTable, Policy)> {
    let trace = value_iteration_discounted_traced(mdp, tol)?;
    Ok((
        ValueTable::Discounted(trace.values),
        Policy::Deterministic(trace.policy),
    ))
}

pub fn value_iteration_discounted_traced(mdp: &FiniteMdp, tol: f64) -> Result<DiscountedTrace> {
    mdp.validate()?;
    let gamma = mdp.discount();
    if gamma >= 1.0 {
        return Err(Error::InvalidArgument(
            "discounted value iteration needs gamma < 1".into(),
        ));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let threshold = tol * (1.0 - gamma) / gamma;
    let mut values = vec![0.0; s_n];
    let mut next = vec![0.0; s_n];
    let mut policy = vec![0; s_n];
    let mut residuals = Vec::new();
    for _ in 0..MAX_SWEEPS {
        for s in 0..s_n {
            let (a, v) = greedy_action((0..a_n).map(|a| mdp.backup(s, a, &values)));
            next[s] = v;
            policy[s] = a;
        }
        let residual = values.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        residuals.push(residual);
        if residual <= threshold {
            // greedy with respect to the returned values
            for (s, p) in policy.iter_mut().enumerate() {
                *p = greedy_action((0..a_n).map(|a| mdp.backup(s, a, &values))).0;
            }
            return Ok(DiscountedTrace {
                values,
                policy,
                residuals,
            });
        }
    }
    Err(Error::InvalidArgument(format!(
        "value iteration did not reach tolerance {tol} in {MAX_SWEEPS} sweeps"
    )))
}

/// `P_pi` (row-major, `S x S`) and `r_pi` at stage `h`.
fn policy_markov_chain(mdp: &FiniteMdp, pi: &Policy, h: usize) -> (Vec<f64>, Vec<f64>) {
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let mut p = vec![0.0; s_n * s_n];
    let mut r = vec![0.0; s_n];
    for s in 0..s_n {
        for a in 0..a_n {
            let w = pi.prob(h, s, a);
            if w == 0.0 {
                continue;
            }
            r[s] += w * mdp.reward(s, a);
            for (dst, prob) in p[s * s_n..(s + 1) * s_n].iter_mut().zip(mdp.row(s, a)) {
                *dst += w * prob;
            }
        }
    }
    (p, r)
}

fn check_policy(mdp: &FiniteMdp, pi: &Policy) -> Result<()> {
    mdp.validate()?;
    pi.validate(mdp.num_states(), mdp.num_actions())
}

fn require_discounted(mdp: &FiniteMdp, pi: &Policy, what: &str) -> Result<()> {
    if mdp.discount() >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "{what} without a horizon needs gamma < 1"
        )));
    }
    if !pi.is_stationary() {
        return Err(Error::InvalidPolicy(format!(
            "{what} in discounted mode needs a stationary policy"
        )));
    }
    Ok(())
}

/// Solves `(I - gamma * M) x = b` by LU.
fn solve_linear(m: &[f64], gamma: f64, b: Vec<f64>, transpose: bool) -> Result<Vec<f64>> {
    let n = b.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = if transpose { m[j * n + i] } else { m[i * n + j] };
            a[(i, j)] -= gamma * v;
        }
    }
    let x = a
        .lu()
        .solve(&DVector::from_vec(b))
        .ok_or_else(|| Error::Singular("I - gamma * P_pi".into()))?;
    Ok(x.iter().copied().collect())
}

/// Exact `V^pi`: a linear solve in discounted mode, backward recursion when the
/// MDP has a horizon.
pub fn policy_evaluation(mdp: &FiniteMdp, pi: &Policy) -> Result<ValueTable> {
    check_policy(mdp, pi)?;
    let s_n = mdp.num_states();
    match mdp.horizon() {
        Some(horizon) => {
            let mut values = vec![vec![0.0; s_n]; horizon + 1];
            for h in (0..horizon).rev() {
                let (p, r) = policy_markov_chain(mdp, pi, h);
                for s in 0..s_n {
                    let ev: f64 = p[s * s_n..(s + 1) * s_n]
                        .iter()
                        .zip(&values[h + 1])
                        .map(|(p, v)| p * v)
                        .sum();
                    values[h][s] = r[s] + mdp.discount() * ev;
                }
            }
            Ok(ValueTable::FiniteHorizon(values))
        }
        None => {
            require_discounted(mdp, pi, "policy evaluation")?;
            let (p, r) = policy_markov_chain(mdp, pi, 0);
            Ok(ValueTable::Discounted(solve_linear(&p, mdp.discount(), r, false)?))
        }
    }
}

/// `eta(pi) = E_{s ~ mu0}[V^pi(s)]`.
pub fn expected_return(mdp: &FiniteMdp, pi: &Policy) -> Result<f64> {
    let v = policy_evaluation(mdp, pi)?;
    Ok(mdp.initial_dist().iter().zip(v.initial()).map(|(m, v)| m * v).sum())
}

/// Unnormalized occupancy `rho(s, a) = sum_t gamma^t P(s_t = s, a_t = a)`.
///
/// Discounted mode solves `(I - gamma P_pi^T) d = mu0` exactly; finite-horizon
/// mode rolls the state distribution forward for `H` stages.
pub fn occupancy_measure(mdp: &FiniteMdp, pi: &Policy) -> Result<OccupancyMeasure> {
    check_policy(mdp, pi)?;
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let mut values = vec![0.0; s_n * a_n];
    let mode = match mdp.horizon() {
        Some(horizon) => {
            let mut dist = mdp.initial_dist().to_vec();
            let mut weight = 1.0;
            for h in 0..horizon {
                let mut next = vec![0.0; s_n];
                for s in 0..s_n {
                    if dist[s] == 0.0 {
                        continue;
                    }
                    for a in 0..a_n {
                        let w = dist[s] * pi.prob(h, s, a);
                        values[s * a_n + a] += weight * w;
                        if w != 0.0 {
                            for (dst, p) in next.iter_mut().zip(mdp.row(s, a)) {
                                *dst += w * p;
                            }
                        }
                    }
                }
                dist = next;
                weight *= mdp.discount();
            }
            OccupancyMode::FiniteHorizon(horizon)
        }
        None => {
            require_discounted(mdp, pi, "occupancy measure")?;
            let (p, _) = policy_markov_chain(mdp, pi, 0);
            let d = solve_linear(&p, mdp.discount(), mdp.initial_dist().to_vec(), true)?;
            for s in 0..s_n {
                for a in 0..a_n {
                    values[s * a_n + a] = d[s] * pi.prob(0, s, a);
                }
            }
            OccupancyMode::Discounted
        }
    };
    Ok(OccupancyMeasure {
        num_actions: a_n,
        values,
        mode,
    })
}

/// `(r_max, v_max)` with `r_max = max |r(s,a)|` and the analytic value bound
/// `v_max = r_max * H` (finite horizon) or `r_max / (1 - gamma)` (discounted).
pub fn extremal_values(mdp: &FiniteMdp) -> Result<(f64, f64)> {
    mdp.validate()?;
    let r_max = mdp.rewards().iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let v_max = match mdp.horizon() {
        Some(h) => r_max * h as f64,
        None => {
            if mdp.discount() >= 1.0 {
                return Err(Error::InvalidArgument(
                    "v_max of an undiscounted mdp needs a horizon".into(),
                ));
            }
            r_max / (1.0 - mdp.discount())
        }
    };
    Ok((r_max, v_max))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::{absorbing, chain};
    use super::*;

    #[test]
    fn finite_chain_geometric_sum() {
        let mdp = chain(3, 1.0, 0.9);
        let (v, pi) = value_iteration_finite(&mdp, 3).unwrap();
        assert!((v.stage(0)[0] - 2.71).abs() < 1e-12);
        assert_eq!(v.stage(3), &[0.0, 0.0, 0.0]);
        assert!(!pi.is_stationary());
    }

    #[test]
    fn zero_horizon_is_all_zero() {
        let mdp = chain(4, 1.0, 0.9);
        let (v, pi) = value_iteration_finite(&mdp, 0).unwrap();
        assert_eq!(v.stage(0), &[0.0; 4]);
        assert!(pi.validate(4, 1).is_ok());
    }

    #[test]
    fn discounted_absorbing_state() {
        let (v, _) = value_iteration_discounted(&absorbing(1.0, 0.9), 1e-10).unwrap();
        assert!((v.initial()[0] - 10.0).abs() <= 1e-10);
    }

    #[test]
    fn discounted_rejects_gamma_one() {
        assert!(value_iteration_discounted(&absorbing(1.0, 1.0), 1e-6).is_err());
        assert!(value_iteration_discounted(&absorbing(1.0, 0.9), 0.0).is_err());
    }

    #[test]
    fn zero_reward_values_vanish() {
        let (v, _) = value_iteration_discounted(&chain(5, 0.0, 0.9), 1e-9).unwrap();
        assert!(v.initial().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn ties_go_to_lowest_action() {
        let mdp =
            FiniteMdp::without_terminals(1, 3, vec![1.0, 1.0, 1.0], vec![0.5, 1.0, 1.0], vec![1.0], 0.5, None).unwrap();
        let (_, pi) = value_iteration_discounted(&mdp, 1e-12).unwrap();
        assert_eq!(pi, Policy::Deterministic(vec![1]));
    }

    #[test]
    fn occupancy_of_absorbing_state() {
        let rho = occupancy_measure(&absorbing(0.0, 0.9), &Policy::Deterministic(vec![0])).unwrap();
        assert!((rho.get(0, 0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn occupancy_splits_between_symmetric_starts() {
        let mdp = FiniteMdp::without_terminals(
            2,
            1,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            vec![0.5, 0.5],
            0.9,
            None,
        )
        .unwrap();
        let rho = occupancy_measure(&mdp, &Policy::Deterministic(vec![0, 0])).unwrap();
        assert!((rho.get(0, 0) - 5.0).abs() < 1e-12);
        assert!((rho.get(1, 0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn finite_horizon_occupancy_mass() {
        let mdp = chain(4, 1.0, 1.0).with_horizon(Some(6)).unwrap();
        let rho = occupancy_measure(&mdp, &Policy::Deterministic(vec![0; 4])).unwrap();
        assert!((rho.total_mass() - 6.0).abs() < 1e-12);
        assert!((rho.expected_mass(1.0) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_policy_constant_reward() {
        let mdp = FiniteMdp::without_terminals(
            2,
            2,
            vec![0.5, 0.5, 0.2, 0.8, 0.8, 0.2, 0.5, 0.5],
            vec![0.3; 4],
            vec![1.0, 0.0],
            0.8,
            None,
        )
        .unwrap();
        let v = policy_evaluation(&mdp, &Policy::uniform(2, 2)).unwrap();
        for x in v.initial() {
            assert!((x - 0.3 / 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_return_point_mass() {
        let mdp = chain(3, 1.0, 0.9);
        let pi = Policy::Deterministic(vec![0; 3]);
        let v = policy_evaluation(&mdp, &pi).unwrap();
        assert_eq!(expected_return(&mdp, &pi).unwrap(), v.initial()[0]);
        assert!((expected_return(&absorbing(1.0, 0.9), &Policy::Deterministic(vec![0])).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_errors() {
        let mdp = chain(3, 1.0, 0.9);
        assert!(policy_evaluation(&mdp, &Policy::Deterministic(vec![0; 2])).is_err());
        let nonstat = Policy::NonStationary(vec![Policy::Deterministic(vec![0; 3])]);
        assert!(policy_evaluation(&mdp, &nonstat).is_err());
        assert!(occupancy_measure(&chain(3, 1.0, 1.0), &Policy::Deterministic(vec![0; 3])).is_err());
    }

    #[test]
    fn extremal_bounds() {
        let mdp = chain(3, -0.7, 0.9);
        let (r, v) = extremal_values(&mdp).unwrap();
        assert!((r - 0.7).abs() < 1e-15 && (v - 7.0).abs() < 1e-12);
        let fh = mdp.with_horizon(Some(10)).unwrap();
        let (r, v) = extremal_values(&fh).unwrap();
        assert_eq!(v, 10.0 * r);
        assert_eq!(extremal_values(&chain(3, 0.0, 0.9)).unwrap(), (0.0, 0.0));
    }
}
