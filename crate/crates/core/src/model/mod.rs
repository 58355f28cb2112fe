//! Bootstrap ensembles of tabular dynamics/reward models, their disagreement
//! uncertainty, and the uncertainty-penalized reward `r_hat - lambda * u`.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::mdp::{occupancy_measure, write_mdp, FiniteMdp, Policy};
use crate::rng::{sample_discrete, stream};

/// Dirichlet pseudo-count added to every next-state cell.
pub const DEFAULT_SMOOTHING: f64 = 0.1;

/// One tabular member: smoothed transition rows and mean rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    /// `p_k(s'|s,a)`, laid out `(s * A + a) * S + s'`.
    pub rows: Vec<f64>,
    /// `r_k(s,a)`: mean observed reward, 0 where unobserved.
    pub rewards: Vec<f64>,
}

/// Ensemble of `K` tabular models fitted on bootstrap resamples.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    num_states: usize,
    num_actions: usize,
    smoothing: f64,
    members: Vec<Member>,
    /// `n(s,a)` summed over all member resamples.
    visit_counts: Vec<u64>,
    /// States observed as the next state of a `done` transition.
    terminal: Vec<bool>,
}

/// Per-(s,a) uncertainty `u(s,a) >= 0`, laid out `s * A + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyTable {
    pub num_actions: usize,
    pub values: Vec<f64>,
}

impl UncertaintyTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Fits `k` members, each on a bootstrap resample of `data.len()` draws taken
/// with probability proportional to `weights`.
pub fn fit_ensemble(
    data: &[Transition],
    weights: &[f64],
    num_states: usize,
    num_actions: usize,
    k: usize,
    smoothing: f64,
    seed: u64,
) -> Result<EnsembleModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if weights.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} transitions",
            weights.len(),
            data.len()
        )));
    }
    let index = WeightedIndex::new(weights).map_err(|e| Error::InvalidArgument(format!("resampling weights: {e}")))?;
    let mut rng = stream(seed, 0xf17);
    let resamples: Vec<Vec<Transition>> = (0..k)
        .map(|_| (0..data.len()).map(|_| data[index.sample(&mut rng)]).collect())
        .collect();
    EnsembleModel::from_resamples(num_states, num_actions, smoothing, &resamples)
}

impl EnsembleModel {
    /// One member per resample. Member rows are `(c(s') + eps) / (n + S eps)`.
    pub fn from_resamples(
        num_states: usize,
        num_actions: usize,
        smoothing: f64,
        resamples: &[Vec<Transition>],
    ) -> Result<Self> {
        if resamples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an ensemble needs at least 2 members, got {}",
                resamples.len()
            )));
        }
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing must be positive, got {smoothing}"
            )));
        }
        if resamples.iter().all(|r| r.is_empty()) {
            return Err(Error::EmptyDataset);
        }
        let (s_n, a_n) = (num_states, num_actions);
        let mut terminal = vec![false; s_n];
        for t in resamples.iter().flatten() {
            if t.state >= s_n || t.next_state >= s_n || t.action >= a_n {
                return Err(Error::DimensionMismatch(format!(
                    "transition ({}, {}, {}) outside {s_n} states x {a_n} actions",
                    t.state, t.action, t.next_state
                )));
            }
            if t.done {
                terminal[t.next_state] = true;
            }
        }
        let mut visit_counts = vec![0u64; s_n * a_n];
        let members = resamples
            .iter()
            .map(|sample| {
                let mut counts = vec![0.0; s_n * a_n * s_n];
                let mut n = vec![0.0; s_n * a_n];
                let mut reward_sum = vec![0.0; s_n * a_n];
                for t in sample {
                    let sa = t.state * a_n + t.action;
                    counts[sa * s_n + t.next_state] += 1.0;
                    n[sa] += 1.0;
                    reward_sum[sa] += t.reward;
                }
                let mut rows = vec![0.0; s_n * a_n * s_n];
                let mut rewards = vec![0.0; s_n * a_n];
                for s in 0..s_n {
                    for a in 0..a_n {
                        let sa = s * a_n + a;
                        let row = &mut rows[sa * s_n..(sa + 1) * s_n];
                        if terminal[s] {
                            row[s] = 1.0;
                            continue;
                        }
                        let denom = n[sa] + s_n as f64 * smoothing;
                        for (p, c) in row.iter_mut().zip(&counts[sa * s_n..]) {
                            *p = (c + smoothing) / denom;
                        }
                        if n[sa] > 0.0 {
                            rewards[sa] = reward_sum[sa] / n[sa];
                        }
                    }
                }
                for (v, c) in visit_counts.iter_mut().zip(&n) {
                    *v += *c as u64;
                }
                Member { rows, rewards }
            })
            .collect();
        Ok(Self {
            num_states,
            num_actions,
            smoothing,
            members,
            visit_counts,
            terminal,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn visit_count(&self, s: usize, a: usize) -> u64 {
        self.visit_counts[s * self.num_actions + a]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    /// Member `k`'s row `p_k(. | s, a)`.
    pub fn member_row(&self, k: usize, s: usize, a: usize) -> &[f64] {
        let sa = s * self.num_actions + a;
        &self.members[k].rows[sa * self.num_states..(sa + 1) * self.num_states]
    }

    /// Largest `|r_k(s,a)|` over members and pairs.
    pub fn reward_bound(&self) -> f64 {
        self.members
            .iter()
            .flat_map(|m| &m.rewards)
            .fold(0.0, |acc: f64, r| acc.max(r.abs()))
    }

    /// Cap applied to `u`: the largest possible row disagreement (2) plus the
    /// largest possible reward disagreement.
    pub fn uncertainty_cap(&self) -> f64 {
        2.0 + 2.0 * self.reward_bound()
    }

    /// `u(s,a) = max_{i,j} l1(p_i, p_j) + max_{i,j} |r_i - r_j|`, capped at
    /// [`uncertainty_cap`](Self::uncertainty_cap). Pairs no member observed get
    /// the cap; terminal states get 0.
    pub fn uncertainty(&self) -> UncertaintyTable {
        let (s_n, a_n) = (self.num_states, self.num_actions);
        let cap = self.uncertainty_cap();
        let k = self.members.len();
        let mut values = vec![0.0; s_n * a_n];
        for s in 0..s_n {
            if self.terminal[s] {
                continue;
            }
            for a in 0..a_n {
                let sa = s * a_n + a;
                if self.visit_counts[sa] == 0 {
                    values[sa] = cap;
                    continue;
                }
                let mut row_gap: f64 = 0.0;
                let mut reward_gap: f64 = 0.0;
                for i in 0..k {
                    for j in i + 1..k {
                        let l1: f64 = self
                            .member_row(i, s, a)
                            .iter()
                            .zip(self.member_row(j, s, a))
                            .map(|(p, q)| (p - q).abs())
                            .sum();
                        row_gap = row_gap.max(l1);
                        let dr = (self.members[i].rewards[sa] - self.members[j].rewards[sa]).abs();
                        reward_gap = reward_gap.max(dr);
                    }
                }
                values[sa] = (row_gap + reward_gap).min(cap);
            }
        }
        UncertaintyTable {
            num_actions: a_n,
            values,
        }
    }

    /// Member-average transition rows.
    pub fn mean_rows(&self) -> Vec<f64> {
        let k = self.members.len() as f64;
        let mut out = vec![0.0; self.members[0].rows.len()];
        for m in &self.members {
            for (o, p) in out.iter_mut().zip(&m.rows) {
                *o += p;
            }
        }
        out.iter_mut().for_each(|o| *o /= k);
        out
    }

    /// Member-average reward `r_hat(s,a)`.
    pub fn mean_rewards(&self) -> Vec<f64> {
        let k = self.members.len() as f64;
        let mut out = vec![0.0; self.num_states * self.num_actions];
        for m in &self.members {
            for (o, r) in out.iter_mut().zip(&m.rewards) {
                *o += r;
            }
        }
        out.iter_mut().for_each(|o| *o /= k);
        out
    }

    /// `r_tilde = mean_k r_k - lambda * u`.
    pub fn penalized_reward(&self, u: &UncertaintyTable, lambda: f64) -> Result<Vec<f64>> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "penalty weight must be nonnegative, got {lambda}"
            )));
        }
        if u.values.len() != self.num_states * self.num_actions {
            return Err(Error::DimensionMismatch("uncertainty table shape".into()));
        }
        Ok(self
            .mean_rewards()
            .iter()
            .zip(&u.values)
            .map(|(r, u)| r - lambda * u)
            .collect())
    }

    /// The member-average model as an exact MDP with start distribution `mu0`.
    pub fn mean_mdp(&self, mu0: &[f64], discount: f64) -> Result<FiniteMdp> {
        FiniteMdp::new(
            self.num_states,
            self.num_actions,
            self.mean_rows(),
            self.mean_rewards(),
            mu0.to_vec(),
            discount,
            None,
            self.terminal.clone(),
        )
    }

    /// [`mean_mdp`](Self::mean_mdp) with rewards replaced by `r_hat - lambda u`.
    pub fn penalized_mdp(&self, u: &UncertaintyTable, lambda: f64, mu0: &[f64], discount: f64) -> Result<FiniteMdp> {
        let mut reward = self.penalized_reward(u, lambda)?;
        for s in (0..self.num_states).filter(|s| self.terminal[*s]) {
            reward[s * self.num_actions..(s + 1) * self.num_actions].fill(0.0);
        }
        self.mean_mdp(mu0, discount)?.with_rewards(reward)
    }

    /// One model step: a uniformly chosen member samples `s'` and reports its
    /// reward estimate.
    pub fn sample_step<R: rand::Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (usize, f64) {
        let k = rng.random_range(0..self.members.len());
        let next = sample_discrete(rng, self.member_row(k, s, a));
        (next, self.members[k].rewards[s * self.num_actions + a])
    }
}

/// `U(pi) = sum_{s,a} rho^pi(s,a) u(s,a)` under the exact MDP `model`.
pub fn policy_uncertainty(model: &FiniteMdp, u: &UncertaintyTable, pi: &Policy) -> Result<f64> {
    if u.values.len() != model.num_states() * model.num_actions() {
        return Err(Error::DimensionMismatch("uncertainty table shape".into()));
    }
    Ok(occupancy_measure(model, pi)?.expectation(&u.values))
}

/// Diagnostic dump: each member in the mdp text format (uniform start,
/// discount 1), then a `uncertainty` section with one line of `u(s, .)` per state.
pub fn write_model(model: &EnsembleModel) -> Result<String> {
    let (s_n, a_n) = (model.num_states, model.num_actions);
    let mut out = String::new();
    writeln!(out, "# ensemble k={} smoothing={}", model.k(), model.smoothing).unwrap();
    for (i, m) in model.members.iter().enumerate() {
        let mdp = FiniteMdp::new(
            s_n,
            a_n,
            m.rows.clone(),
            m.rewards.clone(),
            vec![1.0 / s_n as f64; s_n],
            1.0,
            None,
            vec![false; s_n],
        )?;
        writeln!(out, "# member {i}").unwrap();
        out.push_str(&write_mdp(&mdp));
    }
    writeln!(out, "uncertainty").unwrap();
    let u = model.uncertainty();
    for row in u.values.chunks(a_n) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    Ok(out)
}
