//! Exact tabular MDPs: representation, solvers, occupancy measures and the
//! distances the performance-gap bounds are stated in.

mod distance;
mod io;
mod solve;

pub use distance::{dynamics_distance, l1_distance, tv_distance};
pub use io::{read_mdp, write_mdp};
pub use solve::{
    expected_return, extremal_values, occupancy_measure, policy_evaluation, value_iteration_discounted,
    value_iteration_discounted_traced, value_iteration_finite, DiscountedTrace,
};

use crate::error::{Error, Result};

/// Tolerance on probability-row and initial-distribution normalization.
pub const PROB_TOL: f64 = 1e-9;

/// A finite MDP `(S, A, p, r, mu0, gamma)` with an optional horizon.
///
/// Transition probabilities are stored densely, indexed `(s, a, s')`.
/// When `horizon` is set, solvers and evaluators work in finite-horizon mode
/// (values indexed by stage `h = 0..=H`, with `V_H = 0`); otherwise they
/// use the infinite-horizon discounted criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
    discount: f64,
    horizon: Option<usize>,
    terminal: Vec<bool>,
}

impl FiniteMdp {
    /// Builds and validates an MDP. `transition` is laid out `(s * A + a) * S + s'`
    /// and `reward` is laid out `s * A + a`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial_dist: Vec<f64>,
        discount: f64,
        horizon: Option<usize>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let mdp = Self {
            num_states,
            num_actions,
            transition,
            reward,
            initial_dist,
            discount,
            horizon,
            terminal,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Like [`FiniteMdp::new`] with no terminal states.
    pub fn without_terminals(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial_dist: Vec<f64>,
        discount: f64,
        horizon: Option<usize>,
    ) -> Result<Self> {
        Self::new(
            num_states,
            num_actions,
            transition,
            reward,
            initial_dist,
            discount,
            horizon,
            vec![false; num_states],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (s_n, a_n) = (self.num_states, self.num_actions);
        if s_n == 0 || a_n == 0 {
            return Err(Error::InvalidMdp("state and action counts must be positive".into()));
        }
        if self.transition.len() != s_n * a_n * s_n {
            return Err(Error::InvalidMdp(format!(
                "transition table has {} entries, expected {}",
                self.transition.len(),
                s_n * a_n * s_n
            )));
        }
        if self.reward.len() != s_n * a_n {
            return Err(Error::InvalidMdp(format!(
                "reward table has {} entries, expected {}",
                self.reward.len(),
                s_n * a_n
            )));
        }
        if self.initial_dist.len() != s_n || self.terminal.len() != s_n {
            return Err(Error::InvalidMdp(
                "initial distribution and terminal flags must have one entry per state".into(),
            ));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidMdp(format!("discount {} outside (0, 1]", self.discount)));
        }
        if self.horizon == Some(0) {
            return Err(Error::InvalidMdp("horizon must be positive when set".into()));
        }
        for s in 0..s_n {
            for a in 0..a_n {
                let row = self.row(s, a);
                if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                    return Err(Error::InvalidMdp(format!(
                        "transition row ({s}, {a}) has invalid probability {p}"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "transition row ({s}, {a}) sums to {total}, not 1"
                    )));
                }
                let r = self.reward(s, a);
                if !r.is_finite() {
                    return Err(Error::InvalidMdp(format!("reward ({s}, {a}) is not finite")));
                }
                if self.terminal[s] && (row[s] != 1.0 || r != 0.0) {
                    return Err(Error::InvalidMdp(format!(
                        "terminal state {s} must self-loop with reward 0 under action {a}"
                    )));
                }
            }
        }
        if let Some(p) = self.initial_dist.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidMdp(format!("initial distribution has invalid entry {p}")));
        }
        let total: f64 = self.initial_dist.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidMdp(format!(
                "initial distribution sums to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminals(&self) -> &[bool] {
        &self.terminal
    }

    /// Next-state distribution `p(. | s, a)`.
    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    /// `r(s, a) + gamma * sum_s' p(s'|s,a) next[s']`.
    #[inline]
    pub fn backup(&self, s: usize, a: usize, next: &[f64]) -> f64 {
        let row = self.row(s, a);
        let ev: f64 = row.iter().zip(next).map(|(p, v)| p * v).sum();
        self.reward(s, a) + self.discount * ev
    }

    /// Same dynamics, new reward table.
    pub fn with_rewards(&self, reward: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.reward = reward;
        out.validate()?;
        Ok(out)
    }

    pub fn with_horizon(&self, horizon: Option<usize>) -> Result<Self> {
        let mut out = self.clone();
        out.horizon = horizon;
        out.validate()?;
        Ok(out)
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        let mut out = self.clone();
        out.discount = discount;
        out.validate()?;
        Ok(out)
    }

    pub fn with_initial_dist(&self, initial_dist: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.initial_dist = initial_dist;
        out.validate()?;
        Ok(out)
    }

    /// Shape check used by every two-MDP operation.
    pub fn check_same_shape(&self, other: &FiniteMdp) -> Result<()> {
        if self.num_states != other.num_states || self.num_actions != other.num_actions {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{} (states x actions)",
                self.num_states, self.num_actions, other.num_states, other.num_actions
            )));
        }
        Ok(())
    }
}

/// A policy: stationary deterministic, stationary stochastic, or a
/// non-stationary sequence of stationary policies indexed by stage `h`.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Deterministic(Vec<usize>),
    Stochastic { num_actions: usize, probs: Vec<f64> },
    NonStationary(Vec<Policy>),
}

impl Policy {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy::Stochastic {
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    pub fn is_stationary(&self) -> bool {
        !matches!(self, Policy::NonStationary(_))
    }

    /// The stationary policy used at stage `h`. Stages past the end of a
    /// non-stationary sequence reuse the last stage.
    pub fn stage(&self, h: usize) -> &Policy {
        match self {
            Policy::NonStationary(stages) => stages[h.min(stages.len() - 1)].stage(0),
            other => other,
        }
    }

    /// `pi_h(a | s)`.
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        match self.stage(h) {
            Policy::Deterministic(actions) => f64::from(u8::from(actions[s] == a)),
            Policy::Stochastic { num_actions, probs } => probs[s * num_actions + a],
            Policy::NonStationary(_) => unreachable!("stage() flattens nesting"),
        }
    }

    /// Checks row normalization and action ranges against an MDP shape.
    pub fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        match self {
            Policy::Deterministic(actions) => {
                if actions.len() != num_states {
                    return Err(Error::DimensionMismatch(format!(
                        "deterministic policy covers {} states, mdp has {num_states}",
                        actions.len()
                    )));
                }
                if let Some((s, a)) = actions.iter().enumerate().find(|(_, a)| **a >= num_actions) {
                    return Err(Error::InvalidPolicy(format!("action {a} at state {s} out of range")));
                }
            }
            Policy::Stochastic { num_actions: pa, probs } => {
                if *pa != num_actions || probs.len() != num_states * num_actions {
                    return Err(Error::DimensionMismatch(format!(
                        "stochastic policy table is {}x{pa}, mdp is {num_states}x{num_actions}",
                        probs.len() / (*pa).max(1)
                    )));
                }
                for (s, row) in probs.chunks(num_actions).enumerate() {
                    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                        return Err(Error::InvalidPolicy(format!(
                            "state {s} has an invalid action probability"
                        )));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > PROB_TOL {
                        return Err(Error::InvalidPolicy(format!(
                            "state {s} action probabilities sum to {total}"
                        )));
                    }
                }
            }
            Policy::NonStationary(stages) => {
                if stages.is_empty() {
                    return Err(Error::InvalidPolicy("non-stationary policy has no stages".into()));
                }
                for stage in stages {
                    if !stage.is_stationary() {
                        return Err(Error::InvalidPolicy("nested non-stationary policy".into()));
                    }
                    stage.validate(num_states, num_actions)?;
                }
            }
        }
        Ok(())
    }

    /// Dense `pi_h(. | s)` table for stage `h`.
    pub fn table(&self, h: usize, num_states: usize, num_actions: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_states * num_actions];
        for s in 0..num_states {
            for a in 0..num_actions {
                out[s * num_actions + a] = self.prob(h, s, a);
            }
        }
        out
    }
}

/// State values in either discounted (`V[s]`) or finite-horizon (`V[h][s]`,
/// `h = 0..=H`) form.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueTable {
    Discounted(Vec<f64>),
    FiniteHorizon(Vec<Vec<f64>>),
}

impl ValueTable {
    /// Values at stage `h` (ignored in discounted mode).
    pub fn stage(&self, h: usize) -> &[f64] {
        match self {
            ValueTable::Discounted(v) => v,
            ValueTable::FiniteHorizon(v) => &v[h],
        }
    }

    /// Values at the first decision stage.
    pub fn initial(&self) -> &[f64] {
        self.stage(0)
    }
}

/// Normalization convention of an occupancy measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OccupancyMode {
    /// `sum_t gamma^t P(s_t = s, a_t = a)` over an infinite horizon; mass `1/(1-gamma)`.
    Discounted,
    /// `sum_{t<H} gamma^t P(s_t = s, a_t = a)`; mass `sum_{t<H} gamma^t` (`H` when `gamma = 1`).
    FiniteHorizon(usize),
}

/// Unnormalized occupancy measure `rho(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub num_actions: usize,
    pub values: Vec<f64>,
    pub mode: OccupancyMode,
}

impl OccupancyMeasure {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `sum_{s,a} rho(s, a) f(s, a)` for a table laid out `s * A + a`.
    pub fn expectation(&self, table: &[f64]) -> f64 {
        self.values.iter().zip(table).map(|(r, f)| r * f).sum()
    }

    /// Mass this measure must carry for its mode and discount.
    pub fn expected_mass(&self, discount: f64) -> f64 {
        match self.mode {
            OccupancyMode::Discounted => 1.0 / (1.0 - discount),
            OccupancyMode::FiniteHorizon(h) => (0..h).map(|t| discount.powi(t as i32)).sum(),
        }
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Deterministic chain `0 -> 1 -> ... -> n-1`, last state absorbing, reward
    /// `r` everywhere, start at 0.
    pub fn chain(n: usize, r: f64, gamma: f64) -> FiniteMdp {
        let mut p = vec![0.0; n * n];
        for s in 0..n {
            p[s * n + (s + 1).min(n - 1)] = 1.0;
        }
        let mut mu = vec![0.0; n];
        mu[0] = 1.0;
        FiniteMdp::without_terminals(n, 1, p, vec![r; n], mu, gamma, None).unwrap()
    }

    pub fn absorbing(r: f64, gamma: f64) -> FiniteMdp {
        FiniteMdp::without_terminals(1, 1, vec![1.0], vec![r], vec![1.0], gamma, None).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized_row() {
        let err = FiniteMdp::without_terminals(
            2,
            1,
            vec![0.5, 0.4, 0.0, 1.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            0.9,
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("row (0, 0) sums to"), "{err}");
    }

    #[test]
    fn rejects_bad_initial_distribution() {
        let err = FiniteMdp::without_terminals(1, 1, vec![1.0], vec![0.0], vec![0.5], 0.9, None).unwrap_err();
        assert!(err.to_string().contains("initial distribution"), "{err}");
    }

    #[test]
    fn rejects_rewarding_terminal() {
        let err = FiniteMdp::new(1, 1, vec![1.0], vec![1.0], vec![1.0], 0.9, None, vec![true]).unwrap_err();
        assert!(err.to_string().contains("terminal state 0"), "{err}");
    }

    #[test]
    fn rejects_negative_and_nonfinite_entries() {
        assert!(FiniteMdp::without_terminals(
            2,
            1,
            vec![1.5, -0.5, 0.0, 1.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            0.9,
            None
        )
        .is_err());
        assert!(FiniteMdp::without_terminals(1, 1, vec![1.0], vec![f64::NAN], vec![1.0], 0.9, None).is_err());
        assert!(FiniteMdp::without_terminals(1, 1, vec![1.0], vec![0.0], vec![1.0], 1.5, None).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::Deterministic(vec![0, 2]).validate(2, 2).is_err());
        assert!(Policy::Deterministic(vec![0, 1]).validate(2, 2).is_ok());
        let bad = Policy::Stochastic {
            num_actions: 2,
            probs: vec![0.5, 0.6, 1.0, 0.0],
        };
        assert!(bad.validate(2, 2).is_err());
        assert!(Policy::uniform(3, 4).validate(3, 4).is_ok());
        assert!(Policy::NonStationary(vec![]).validate(1, 1).is_err());
    }

    #[test]
    fn nonstationary_stage_lookup() {
        let pi = Policy::NonStationary(vec![Policy::Deterministic(vec![1]), Policy::Deterministic(vec![0])]);
        assert_eq!(pi.prob(0, 0, 1), 1.0);
        assert_eq!(pi.prob(1, 0, 0), 1.0);
        assert_eq!(pi.prob(5, 0, 0), 1.0);
    }
}
