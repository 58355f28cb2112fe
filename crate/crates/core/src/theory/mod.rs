//! Numerical checks of the performance-gap bounds and identities for
//! uncertainty-penalized model-based RL, on randomly generated MDPs.
//!
//! Every check returns [`BoundReport`]s with the exact left- and right-hand
//! sides so slack is visible even when a check passes.

mod checks;
mod verify;

pub use checks::{
    check_g_inequality, check_lemma1_bound, check_lemma1_identity, check_return_gap, check_telescoping, check_theorem1,
    check_theorem2, check_tv_identity,
};
pub use verify::{reports_for_seed, verify_all, FamilyStats, VerifyConfig, VerifySummary};

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::mdp::{dynamics_distance, FiniteMdp, Policy};
use crate::model::UncertaintyTable;
use crate::rng::{stream, Rng};

/// Slack allowed on inequality checks.
pub const INEQUALITY_TOL: f64 = 1e-9;
/// Absolute gap allowed on identity checks.
pub const IDENTITY_TOL: f64 = 1e-8;

/// Check families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CheckKind {
    /// Optimal finite-horizon values of two MDPs with shared reward differ by at
    /// most `D (r_max + V_max)(H - h)` at every stage.
    Theorem1,
    /// Optimal returns differ by at most `D (r_max + V_max) H`.
    ReturnGap,
    /// `eta_tilde(pi) = eta_hat(pi) - lambda U(pi)` for any policy.
    Lemma1Identity,
    /// Return gap between consecutive penalized-optimal policies, with the
    /// same uncertainty table at both epochs.
    Lemma1Bound,
    /// The same bound with independent uncertainty tables. Not a theorem:
    /// reported for inspection, never counted as a violation.
    Lemma1BoundDistinctU,
    /// `eta_hat(pi) - eta(pi) = gamma E_{rho_hat}[G]`.
    Telescoping,
    /// `|G(s,a)| <= V_max l1(p_hat(s,a), p(s,a)) / 2`.
    GInequality,
    /// True-MDP return gap between consecutive penalized-optimal policies.
    Theorem2,
    /// `tv(p, q) = l1(p, q) / 2`.
    TvIdentity,
}

impl CheckKind {
    pub const ALL: [CheckKind; 9] = [
        CheckKind::Theorem1,
        CheckKind::ReturnGap,
        CheckKind::Lemma1Identity,
        CheckKind::Lemma1Bound,
        CheckKind::Lemma1BoundDistinctU,
        CheckKind::Telescoping,
        CheckKind::GInequality,
        CheckKind::Theorem2,
        CheckKind::TvIdentity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Theorem1 => "theorem1",
            CheckKind::ReturnGap => "return_gap",
            CheckKind::Lemma1Identity => "lemma1_identity",
            CheckKind::Lemma1Bound => "lemma1_bound",
            CheckKind::Lemma1BoundDistinctU => "lemma1_bound_distinct_u",
            CheckKind::Telescoping => "telescoping",
            CheckKind::GInequality => "g_inequality",
            CheckKind::Theorem2 => "theorem2",
            CheckKind::TvIdentity => "tv_identity",
        }
    }

    pub fn is_identity(self) -> bool {
        matches!(
            self,
            CheckKind::Lemma1Identity | CheckKind::Telescoping | CheckKind::TvIdentity
        )
    }

    /// Whether a failure of this check counts as a violation.
    pub fn is_asserted(self) -> bool {
        self != CheckKind::Lemma1BoundDistinctU
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown check {s:?}")))
    }
}

/// Outcome of one check instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub check: CheckKind,
    pub seed: u64,
    /// Stage `h`, flattened `(s, a)` index, or 0 for scalar checks.
    pub index: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs` for inequalities, `-|lhs - rhs|` for identities.
    pub slack: f64,
    pub passed: bool,
    /// Where the worst case occurred, when that is more specific than `index`.
    pub witness: Option<String>,
    /// Named right-hand-side components and diagnostics.
    pub terms: Vec<(String, f64)>,
}

impl BoundReport {
    pub fn inequality(check: CheckKind, seed: u64, index: usize, lhs: f64, rhs: f64) -> Self {
        Self {
            check,
            seed,
            index,
            lhs,
            rhs,
            slack: rhs - lhs,
            passed: lhs <= rhs + INEQUALITY_TOL,
            witness: None,
            terms: Vec::new(),
        }
    }

    pub fn identity(check: CheckKind, seed: u64, index: usize, lhs: f64, rhs: f64) -> Self {
        let gap = (lhs - rhs).abs();
        Self {
            check,
            seed,
            index,
            lhs,
            rhs,
            slack: -gap,
            passed: gap <= IDENTITY_TOL,
            witness: None,
            terms: Vec::new(),
        }
    }

    pub fn with_witness(mut self, witness: impl Into<String>) -> Self {
        self.witness = Some(witness.into());
        self
    }

    pub fn with_term(mut self, name: &str, value: f64) -> Self {
        self.terms.push((name.to_string(), value));
        self
    }

    pub fn is_violation(&self) -> bool {
        !self.passed && self.check.is_asserted()
    }

    pub const CSV_HEADER: &'static str = "check,seed,h,lhs,rhs,slack,passed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.check, self.seed, self.index, self.lhs, self.rhs, self.slack, self.passed
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = |what: &str| Error::InvalidArgument(format!("bad {what} in report row {line:?}"));
        if f.len() != 7 {
            return Err(bad("column count"));
        }
        let check: CheckKind = f[0].parse()?;
        Ok(Self {
            check,
            seed: f[1].parse().map_err(|_| bad("seed"))?,
            index: f[2].parse().map_err(|_| bad("h"))?,
            lhs: f[3].parse().map_err(|_| bad("lhs"))?,
            rhs: f[4].parse().map_err(|_| bad("rhs"))?,
            slack: f[5].parse().map_err(|_| bad("slack"))?,
            passed: f[6].parse().map_err(|_| bad("passed"))?,
            witness: None,
            terms: Vec::new(),
        })
    }
}

/// Two MDPs over the same state and action spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpPair {
    pub m1: FiniteMdp,
    pub m2: FiniteMdp,
    pub shared_reward: bool,
    /// Per-row l1 budget used to perturb `m1` into `m2`.
    pub perturbation_size: f64,
}

/// Discount used by [`random_mdp_pair`].
pub const DEFAULT_PAIR_DISCOUNT: f64 = 0.9;

/// Dirichlet(1, ..., 1) draw: normalized unit exponentials.
pub fn random_simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

/// Random MDP: Dirichlet(1) transition rows and start distribution, rewards
/// uniform in `[-1, 1]`, no terminal states.
pub fn random_mdp(rng: &mut Rng, num_states: usize, num_actions: usize, discount: f64) -> Result<FiniteMdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidArgument("need at least one state and one action".into()));
    }
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        transition.extend(random_simplex(rng, num_states));
    }
    let reward = (0..num_states * num_actions)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let mu0 = random_simplex(rng, num_states);
    FiniteMdp::without_terminals(num_states, num_actions, transition, reward, mu0, discount, None)
}

/// Same rewards and start distribution as `m`, each row moved toward a fresh
/// Dirichlet draw by `eps / 2`, so every row moves by at most `eps` in l1.
pub fn perturb_dynamics(rng: &mut Rng, m: &FiniteMdp, eps: f64) -> Result<FiniteMdp> {
    if !(0.0..=2.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("perturbation {eps} outside [0, 2]")));
    }
    let s_n = m.num_states();
    let mut transition = Vec::with_capacity(m.transitions().len());
    for row in m.transitions().chunks(s_n) {
        let q = random_simplex(rng, s_n);
        transition.extend(row.iter().zip(&q).map(|(p, q)| (1.0 - eps / 2.0) * p + eps / 2.0 * q));
    }
    FiniteMdp::without_terminals(
        s_n,
        m.num_actions(),
        transition,
        m.rewards().to_vec(),
        m.initial_dist().to_vec(),
        m.discount(),
        m.horizon(),
    )
}

/// Deterministic random pair with shared rewards and `D_l1(m1, m2) <= eps`,
/// discount [`DEFAULT_PAIR_DISCOUNT`].
pub fn random_mdp_pair(seed: u64, num_states: usize, num_actions: usize, eps: f64) -> Result<MdpPair> {
    random_mdp_pair_with_discount(seed, num_states, num_actions, eps, DEFAULT_PAIR_DISCOUNT)
}

pub fn random_mdp_pair_with_discount(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    eps: f64,
    discount: f64,
) -> Result<MdpPair> {
    if !(0.0..=2.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("perturbation {eps} outside [0, 2]")));
    }
    let mut rng = stream(seed, 0xa1);
    let m1 = random_mdp(&mut rng, num_states, num_actions, discount)?;
    let m2 = perturb_dynamics(&mut rng, &m1, eps)?;
    Ok(MdpPair {
        m1,
        m2,
        shared_reward: true,
        perturbation_size: eps,
    })
}

impl MdpPair {
    pub fn distance(&self) -> Result<f64> {
        Ok(dynamics_distance(&self.m1, &self.m2)?.0)
    }
}

/// Uncertainty table with entries uniform in `[0, max]`.
pub fn random_uncertainty(rng: &mut Rng, num_states: usize, num_actions: usize, max: f64) -> UncertaintyTable {
    UncertaintyTable {
        num_actions,
        values: (0..num_states * num_actions)
            .map(|_| rng.random_range(0.0..=max))
            .collect(),
    }
}

/// Stationary stochastic policy with Dirichlet(1) rows.
pub fn random_policy(rng: &mut Rng, num_states: usize, num_actions: usize) -> Policy {
    let mut probs = Vec::with_capacity(num_states * num_actions);
    for _ in 0..num_states {
        probs.extend(random_simplex(rng, num_actions));
    }
    Policy::Stochastic { num_actions, probs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_generation_is_deterministic_and_within_budget() {
        let a = random_mdp_pair(5, 4, 3, 0.2).unwrap();
        assert_eq!(a, random_mdp_pair(5, 4, 3, 0.2).unwrap());
        assert!(a.distance().unwrap() <= 0.2 + 1e-9);
        assert_eq!(a.m1.rewards(), a.m2.rewards());
        assert!(a.m1.rewards().iter().all(|r| (-1.0..=1.0).contains(r)));
    }

    #[test]
    fn zero_eps_copies_dynamics() {
        let p = random_mdp_pair(1, 5, 2, 0.0).unwrap();
        assert_eq!(p.m1.transitions(), p.m2.transitions());
    }

    #[test]
    fn full_eps_stays_in_range() {
        for seed in 0..20 {
            let p = random_mdp_pair(seed, 2, 2, 2.0).unwrap();
            assert!(p.distance().unwrap() <= 2.0 + 1e-9);
        }
        assert!(random_mdp_pair(0, 2, 2, 2.5).is_err());
        assert!(random_mdp_pair(0, 2, 2, -0.1).is_err());
    }

    #[test]
    fn report_pass_rules() {
        assert!(BoundReport::inequality(CheckKind::Theorem1, 0, 0, 1.0 + 5e-10, 1.0).passed);
        assert!(!BoundReport::inequality(CheckKind::Theorem1, 0, 0, 1.0 + 2e-9, 1.0).passed);
        assert!(BoundReport::identity(CheckKind::Telescoping, 0, 0, 1.0, 1.0 + 5e-9).passed);
        assert!(!BoundReport::identity(CheckKind::Telescoping, 0, 0, 1.0, 1.0 + 2e-8).passed);
        let info = BoundReport::inequality(CheckKind::Lemma1BoundDistinctU, 0, 0, 2.0, 1.0);
        assert!(!info.passed && !info.is_violation());
    }

    #[test]
    fn csv_round_trip() {
        let r = BoundReport::inequality(CheckKind::Theorem2, 17, 3, 0.1 + 0.2, 1.0 / 3.0);
        let back = BoundReport::parse_csv_row(&r.csv_row()).unwrap();
        assert_eq!(back, r);
        for k in CheckKind::ALL {
            assert_eq!(k.name().parse::<CheckKind>().unwrap(), k);
        }
    }
}
