use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checks::{
    check_g_inequality, check_lemma1_bound, check_lemma1_identity, check_return_gap, check_telescoping, check_theorem1,
    check_theorem2, check_tv_identity,
};
use super::{random_mdp_pair_with_discount, random_policy, random_simplex, random_uncertainty, BoundReport, CheckKind};
use crate::envs::{Origin, Transition};
use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::model::{fit_ensemble, UncertaintyTable, DEFAULT_SMOOTHING};
use crate::rng::{mix, sample_discrete, stream, Rng};

/// Settings for a verification batch. Instance sizes are drawn per seed from
/// `2..=max_states`, `1..=max_actions` and `1..=max_horizon`; the perturbation
/// size cycles through `eps_grid` by seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub first_seed: u64,
    pub seeds: u64,
    pub max_states: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
    pub eps_grid: Vec<f64>,
    pub lambda: f64,
    /// Discount for the discounted-criterion checks. Finite-horizon checks
    /// alternate between 1 (even seeds) and this value (odd seeds).
    pub discount: f64,
    /// Upper end of synthetic uncertainty tables.
    pub u_max: f64,
    /// Ensemble size for the bootstrap models of the true-MDP check.
    pub ensemble_size: usize,
    /// Distribution pairs per seed for the tv/l1 identity.
    pub tv_pairs: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            first_seed: 0,
            seeds: 1000,
            max_states: 8,
            max_actions: 4,
            max_horizon: 10,
            eps_grid: vec![0.0, 0.05, 0.2, 0.5],
            lambda: 1.0,
            discount: 0.9,
            u_max: 0.5,
            ensemble_size: 5,
            tv_pairs: 10,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.seeds == 0 {
            return bad("at least one seed is required".into());
        }
        if self.max_states == 0 || self.max_actions == 0 || self.max_horizon == 0 {
            return bad("instance size limits must be positive".into());
        }
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|e| !(0.0..=2.0).contains(e)) {
            return bad(format!("eps grid {:?} must be nonempty within [0, 2]", self.eps_grid));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be nonnegative", self.lambda));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount {} outside (0, 1)", self.discount));
        }
        if !(self.u_max >= 0.0 && self.u_max.is_finite()) {
            return bad(format!("u_max {} must be nonnegative", self.u_max));
        }
        if self.ensemble_size < 2 {
            return bad("ensembles need at least 2 members".into());
        }
        if self.tv_pairs == 0 {
            return bad("tv_pairs must be positive".into());
        }
        Ok(())
    }
}

/// Reports of a batch, one per (check family, seed), ordered by family then seed.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifySummary {
    pub reports: Vec<BoundReport>,
}

/// Per-family statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyStats {
    pub reports: usize,
    pub failures: usize,
    pub min_slack: f64,
    pub worst_seed: u64,
}

impl VerifySummary {
    /// Failures of asserted families.
    pub fn violations(&self) -> Vec<&BoundReport> {
        self.reports.iter().filter(|r| r.is_violation()).collect()
    }

    pub fn families(&self) -> BTreeMap<CheckKind, FamilyStats> {
        let mut out: BTreeMap<CheckKind, FamilyStats> = BTreeMap::new();
        for r in &self.reports {
            let e = out.entry(r.check).or_insert(FamilyStats {
                reports: 0,
                failures: 0,
                min_slack: f64::INFINITY,
                worst_seed: r.seed,
            });
            e.reports += 1;
            e.failures += usize::from(!r.passed);
            if r.slack < e.min_slack {
                e.min_slack = r.slack;
                e.worst_seed = r.seed;
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.reports.len() + 1));
        out.push_str(BoundReport::CSV_HEADER);
        out.push('\n');
        for r in &self.reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    /// Human-readable table: reports, failures and minimum slack per family,
    /// followed by the witnesses of asserted failures.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<26}{:>9}{:>10}{:>16}{:>8}",
            "check", "reports", "failures", "min_slack", "seed"
        )
        .unwrap();
        for (kind, s) in self.families() {
            let note = if kind.is_asserted() { "" } else { "  (informational)" };
            writeln!(
                out,
                "{:<26}{:>9}{:>10}{:>16.3e}{:>8}{note}",
                kind.name(),
                s.reports,
                s.failures,
                s.min_slack,
                s.worst_seed
            )
            .unwrap();
        }
        let violations = self.violations();
        writeln!(out, "violations: {}", violations.len()).unwrap();
        for r in violations.iter().take(20) {
            writeln!(
                out,
                "  {} seed={} lhs={} rhs={} {}",
                r.check,
                r.seed,
                r.lhs,
                r.rhs,
                r.witness.as_deref().unwrap_or("")
            )
            .unwrap();
        }
        out
    }
}

/// Keeps the report with the smallest slack and records how many instances
/// it summarizes.
fn worst(reports: Vec<BoundReport>) -> BoundReport {
    let n = reports.len();
    let mut worst = reports
        .into_iter()
        .min_by(|a, b| a.slack.total_cmp(&b.slack))
        .expect("at least one report");
    worst.terms.push(("instances".into(), n as f64));
    worst
}

/// Samples `n` transitions of `m` with `(s, a)` uniform.
fn uniform_transitions(m: &FiniteMdp, n: usize, rng: &mut Rng) -> Vec<Transition> {
    let (s_n, a_n) = (m.num_states(), m.num_actions());
    (0..n)
        .map(|_| {
            let s = rng.random_range(0..s_n);
            let a = rng.random_range(0..a_n);
            Transition {
                state: s,
                action: a,
                reward: m.reward(s, a),
                next_state: sample_discrete(rng, m.row(s, a)),
                done: false,
                origin: Origin::Offline,
                step_index: 0,
            }
        })
        .collect()
}

/// Member-average dynamics of a bootstrap ensemble fitted on `data`, with the
/// true reward table, plus the ensemble's uncertainty.
fn bootstrap_model(m: &FiniteMdp, data: &[Transition], k: usize, seed: u64) -> Result<(FiniteMdp, UncertaintyTable)> {
    let ensemble = fit_ensemble(
        data,
        &vec![1.0; data.len()],
        m.num_states(),
        m.num_actions(),
        k,
        DEFAULT_SMOOTHING,
        seed,
    )?;
    let model = FiniteMdp::without_terminals(
        m.num_states(),
        m.num_actions(),
        ensemble.mean_rows(),
        m.rewards().to_vec(),
        m.initial_dist().to_vec(),
        m.discount(),
        None,
    )?;
    Ok((model, ensemble.uncertainty()))
}

/// All check families for one seed.
pub fn reports_for_seed(cfg: &VerifyConfig, seed: u64) -> Result<Vec<BoundReport>> {
    let mut rng = stream(seed, 0x7e5);
    let s_n = if cfg.max_states >= 2 {
        rng.random_range(2..=cfg.max_states)
    } else {
        1
    };
    let a_n = rng.random_range(1..=cfg.max_actions);
    let horizon = rng.random_range(1..=cfg.max_horizon);
    let eps = cfg.eps_grid[(seed % cfg.eps_grid.len() as u64) as usize];
    let fh_discount = if seed.is_multiple_of(2) { 1.0 } else { cfg.discount };

    let pair = random_mdp_pair_with_discount(seed, s_n, a_n, eps, fh_discount)?;
    let (m1, m2) = (&pair.m1, &pair.m2);
    let d1 = m1.with_discount(cfg.discount)?;
    let d2 = m2.with_discount(cfg.discount)?;
    let u = random_uncertainty(&mut rng, s_n, a_n, cfg.u_max);
    let u_other = random_uncertainty(&mut rng, s_n, a_n, cfg.u_max);
    let pi = random_policy(&mut rng, s_n, a_n);

    let mut out = Vec::with_capacity(CheckKind::ALL.len());
    out.push(worst(check_theorem1(&pair, horizon, seed)?));
    out.push(check_return_gap(&pair, horizon, seed)?);
    out.push(worst(vec![
        check_lemma1_identity(&d1, &u, cfg.lambda, &pi, seed)?,
        check_lemma1_identity(&m1.with_horizon(Some(horizon))?, &u, cfg.lambda, &pi, seed)?,
    ]));
    out.push(check_lemma1_bound(m1, m2, &u, &u, cfg.lambda, horizon, seed)?);
    out.push(check_lemma1_bound(m1, m2, &u, &u_other, cfg.lambda, horizon, seed)?);
    out.push(check_telescoping(&d1, &d2, &pi, seed)?);
    out.push(worst(check_g_inequality(&d1, &d2, &pi, seed)?));

    let data = uniform_transitions(m1, 10 * s_n * a_n, &mut rng);
    let k = cfg.ensemble_size;
    let (mt, ut) = bootstrap_model(m1, &data, k, mix(seed, 1))?;
    let (mt1, ut1) = bootstrap_model(m1, &data, k, mix(seed, 2))?;
    out.push(check_theorem2(m1, &mt, &mt1, &ut, &ut1, cfg.lambda, horizon, seed)?);

    let tv = (0..cfg.tv_pairs)
        .map(|i| {
            let p = random_simplex(&mut rng, s_n);
            let q = random_simplex(&mut rng, s_n);
            check_tv_identity(&p, &q, seed, i)
        })
        .collect::<Result<Vec<_>>>()?;
    out.push(worst(tv));
    Ok(out)
}

/// Runs every family over `cfg.seeds` consecutive seeds in parallel and merges
/// the reports in (family, seed) order.
pub fn verify_all(cfg: &VerifyConfig) -> Result<VerifySummary> {
    cfg.validate()?;
    let per_seed: Vec<Vec<BoundReport>> = (cfg.first_seed..cfg.first_seed + cfg.seeds)
        .into_par_iter()
        .map(|seed| reports_for_seed(cfg, seed))
        .collect::<Result<_>>()?;
    let mut reports: Vec<BoundReport> = per_seed.into_iter().flatten().collect();
    reports.sort_by_key(|r| (r.check, r.seed));
    Ok(VerifySummary { reports })
}
