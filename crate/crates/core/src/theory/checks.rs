use super::{BoundReport, CheckKind, MdpPair};
use crate::error::{Error, Result};
use crate::mdp::{
    dynamics_distance, expected_return, l1_distance, occupancy_measure, policy_evaluation, tv_distance,
    value_iteration_finite, FiniteMdp, Policy, ValueTable,
};
use crate::model::UncertaintyTable;

fn require_shared_reward(pair: &MdpPair) -> Result<()> {
    pair.m1.check_same_shape(&pair.m2)?;
    if !pair.shared_reward || pair.m1.rewards() != pair.m2.rewards() {
        return Err(Error::InvalidArgument(
            "value-gap bounds need both MDPs to share one reward table".into(),
        ));
    }
    Ok(())
}

fn require_same_reward(m: &FiniteMdp, m_hat: &FiniteMdp) -> Result<()> {
    m.check_same_shape(m_hat)?;
    if m.rewards() != m_hat.rewards() {
        return Err(Error::InvalidArgument("the two MDPs must share rewards".into()));
    }
    if m.initial_dist() != m_hat.initial_dist() || m.discount() != m_hat.discount() {
        return Err(Error::InvalidArgument(
            "the two MDPs must share start distribution and discount".into(),
        ));
    }
    Ok(())
}

fn require_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "penalty weight must be nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

fn check_u(m: &FiniteMdp, u: &UncertaintyTable) -> Result<()> {
    if u.values.len() != m.num_states() * m.num_actions() {
        return Err(Error::DimensionMismatch(format!(
            "uncertainty table has {} entries, mdp has {} pairs",
            u.values.len(),
            m.num_states() * m.num_actions()
        )));
    }
    if u.values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(
            "uncertainty must be finite and nonnegative".into(),
        ));
    }
    Ok(())
}

fn r_max_of<'a>(tables: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    tables.into_iter().flatten().fold(0.0, |m: f64, r| m.max(r.abs()))
}

fn stage_values(v: &ValueTable) -> &[Vec<f64>] {
    match v {
        ValueTable::FiniteHorizon(stages) => stages,
        ValueTable::Discounted(_) => unreachable!("finite-horizon solve"),
    }
}

fn penalize(m: &FiniteMdp, u: &UncertaintyTable, lambda: f64) -> Result<FiniteMdp> {
    let reward = m.rewards().iter().zip(&u.values).map(|(r, u)| r - lambda * u).collect();
    m.with_rewards(reward)
}

fn initial_value(m: &FiniteMdp, v: &[f64]) -> f64 {
    m.initial_dist().iter().zip(v).map(|(p, v)| p * v).sum()
}

/// One report per stage `h = 0..=H`: `max_s |V*_{1,h}(s) - V*_{2,h}(s)|` against
/// `D (r_max + V_max)(H - h)` with `V_max = r_max H`. The term `gamma_weighted`
/// records the tighter `D (r_max + V_max) sum_{j < H-h} gamma^j`, not asserted.
pub fn check_theorem1(pair: &MdpPair, horizon: usize, seed: u64) -> Result<Vec<BoundReport>> {
    require_shared_reward(pair)?;
    let (d, _) = dynamics_distance(&pair.m1, &pair.m2)?;
    let r_max = r_max_of([pair.m1.rewards()]);
    let v_max = r_max * horizon as f64;
    let (v1, _) = value_iteration_finite(&pair.m1, horizon)?;
    let (v2, _) = value_iteration_finite(&pair.m2, horizon)?;
    let gamma = pair.m1.discount();
    let mut reports = Vec::with_capacity(horizon + 1);
    for (h, (a, b)) in stage_values(&v1).iter().zip(stage_values(&v2)).enumerate() {
        let (worst, gap) = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .enumerate()
            .fold((0, 0.0), |acc, (s, g)| if g > acc.1 { (s, g) } else { acc });
        let remaining = horizon - h;
        let weighted: f64 = (0..remaining).map(|j| gamma.powi(j as i32)).sum();
        reports.push(
            BoundReport::inequality(
                CheckKind::Theorem1,
                seed,
                h,
                gap,
                d * (r_max + v_max) * remaining as f64,
            )
            .with_witness(format!("h={h} s={worst}"))
            .with_term("gamma_weighted", d * (r_max + v_max) * weighted),
        );
    }
    Ok(reports)
}

/// `|eta_1(pi*_1) - eta_2(pi*_2)| <= D (r_max + V_max) H` with both optima
/// from finite-horizon value iteration.
pub fn check_return_gap(pair: &MdpPair, horizon: usize, seed: u64) -> Result<BoundReport> {
    require_shared_reward(pair)?;
    let (d, _) = dynamics_distance(&pair.m1, &pair.m2)?;
    let r_max = r_max_of([pair.m1.rewards()]);
    let v_max = r_max * horizon as f64;
    let (v1, _) = value_iteration_finite(&pair.m1, horizon)?;
    let (v2, _) = value_iteration_finite(&pair.m2, horizon)?;
    let eta1 = initial_value(&pair.m1, v1.initial());
    let eta2 = initial_value(&pair.m2, v2.initial());
    Ok(BoundReport::inequality(
        CheckKind::ReturnGap,
        seed,
        0,
        (eta1 - eta2).abs(),
        d * (r_max + v_max) * horizon as f64,
    )
    .with_term("eta_1", eta1)
    .with_term("eta_2", eta2))
}

/// `eta_tilde(pi) = eta_hat(pi) - lambda U(pi)`, where the left side is a
/// direct evaluation on the penalized MDP and `U` uses the unnormalized
/// occupancy of `m_hat`. Works in discounted and finite-horizon mode.
pub fn check_lemma1_identity(
    m_hat: &FiniteMdp,
    u: &UncertaintyTable,
    lambda: f64,
    pi: &Policy,
    seed: u64,
) -> Result<BoundReport> {
    require_lambda(lambda)?;
    check_u(m_hat, u)?;
    let penalized = penalize(m_hat, u, lambda)?;
    let eta_tilde = expected_return(&penalized, pi)?;
    let eta_hat = expected_return(m_hat, pi)?;
    let big_u = occupancy_measure(m_hat, pi)?.expectation(&u.values);
    Ok(
        BoundReport::identity(CheckKind::Lemma1Identity, seed, 0, eta_tilde, eta_hat - lambda * big_u)
            .with_term("eta_hat", eta_hat)
            .with_term("policy_uncertainty", big_u),
    )
}

struct PenalizedSolve {
    policy: Policy,
    eta_hat: f64,
    big_u: f64,
}

/// Optimal policy of the penalized finite-horizon MDP, with its return on the
/// unpenalized model and its policy uncertainty.
fn penalized_optimum(m_hat: &FiniteMdp, u: &UncertaintyTable, lambda: f64) -> Result<PenalizedSolve> {
    let horizon = m_hat.horizon().expect("finite-horizon model");
    let penalized = penalize(m_hat, u, lambda)?;
    let (_, policy) = value_iteration_finite(&penalized, horizon)?;
    let eta_hat = expected_return(m_hat, &policy)?;
    let big_u = occupancy_measure(m_hat, &policy)?.expectation(&u.values);
    Ok(PenalizedSolve { policy, eta_hat, big_u })
}

/// `|eta_hat_t(pi*_t) - eta_hat_t1(pi*_t1)| <= D(p_t, p_t1)(r_max + V_max) H
/// + lambda |U_t(pi*_t) - U_t1(pi*_t1)|`, where `pi*` are the finite-horizon
/// optima of the penalized models and `r_max` covers every reward table
/// involved. Reported as [`CheckKind::Lemma1Bound`] when `u_t == u_t1` and as
/// [`CheckKind::Lemma1BoundDistinctU`] otherwise.
#[allow(clippy::too_many_arguments)]
pub fn check_lemma1_bound(
    m_hat_t: &FiniteMdp,
    m_hat_t1: &FiniteMdp,
    u_t: &UncertaintyTable,
    u_t1: &UncertaintyTable,
    lambda: f64,
    horizon: usize,
    seed: u64,
) -> Result<BoundReport> {
    require_lambda(lambda)?;
    m_hat_t.check_same_shape(m_hat_t1)?;
    check_u(m_hat_t, u_t)?;
    check_u(m_hat_t1, u_t1)?;
    let mt = m_hat_t.with_horizon(Some(horizon))?;
    let mt1 = m_hat_t1.with_horizon(Some(horizon))?;
    let a = penalized_optimum(&mt, u_t, lambda)?;
    let b = penalized_optimum(&mt1, u_t1, lambda)?;
    let (d, _) = dynamics_distance(&mt, &mt1)?;
    let pen_t = penalize(&mt, u_t, lambda)?;
    let pen_t1 = penalize(&mt1, u_t1, lambda)?;
    let r_max = r_max_of([mt.rewards(), mt1.rewards(), pen_t.rewards(), pen_t1.rewards()]);
    let v_max = r_max * horizon as f64;
    let dynamics = d * (r_max + v_max) * horizon as f64;
    let uncertainty = lambda * (a.big_u - b.big_u).abs();
    let kind = if u_t == u_t1 {
        CheckKind::Lemma1Bound
    } else {
        CheckKind::Lemma1BoundDistinctU
    };
    Ok(
        BoundReport::inequality(kind, seed, 0, (a.eta_hat - b.eta_hat).abs(), dynamics + uncertainty)
            .with_term("dynamics", dynamics)
            .with_term("uncertainty", uncertainty),
    )
}

/// `G(s,a) = sum_s' (p_hat - p)(s'|s,a) V^pi_M(s')` for all pairs.
fn g_table(m: &FiniteMdp, m_hat: &FiniteMdp, v: &[f64]) -> Vec<f64> {
    let (s_n, a_n) = (m.num_states(), m.num_actions());
    let mut g = Vec::with_capacity(s_n * a_n);
    for s in 0..s_n {
        for a in 0..a_n {
            g.push(
                m_hat
                    .row(s, a)
                    .iter()
                    .zip(m.row(s, a))
                    .zip(v)
                    .map(|((ph, p), v)| (ph - p) * v)
                    .sum(),
            );
        }
    }
    g
}

fn require_discounted(m: &FiniteMdp) -> Result<()> {
    if m.horizon().is_some() || m.discount() >= 1.0 {
        return Err(Error::InvalidArgument(
            "this check is stated for the discounted criterion (no horizon, gamma < 1)".into(),
        ));
    }
    Ok(())
}

/// `eta_hat(pi) - eta(pi) = gamma sum_{s,a} rho_hat^pi(s,a) G(s,a)` with exact
/// `V^pi_M` and exact occupancy of `m_hat`.
pub fn check_telescoping(m: &FiniteMdp, m_hat: &FiniteMdp, pi: &Policy, seed: u64) -> Result<BoundReport> {
    require_same_reward(m, m_hat)?;
    require_discounted(m)?;
    let v = policy_evaluation(m, pi)?;
    let g = g_table(m, m_hat, v.initial());
    let rho_hat = occupancy_measure(m_hat, pi)?;
    let lhs = expected_return(m_hat, pi)? - initial_value(m, v.initial());
    Ok(BoundReport::identity(
        CheckKind::Telescoping,
        seed,
        0,
        lhs,
        m.discount() * rho_hat.expectation(&g),
    ))
}

/// One report per `(s, a)`: `|G(s,a)| <= V_max l1(p_hat(s,a), p(s,a)) / 2`
/// with `V_max = r_max / (1 - gamma)`.
pub fn check_g_inequality(m: &FiniteMdp, m_hat: &FiniteMdp, pi: &Policy, seed: u64) -> Result<Vec<BoundReport>> {
    require_same_reward(m, m_hat)?;
    require_discounted(m)?;
    let r_max = r_max_of([m.rewards()]);
    let v_max = r_max / (1.0 - m.discount());
    let v = policy_evaluation(m, pi)?;
    let g = g_table(m, m_hat, v.initial());
    let a_n = m.num_actions();
    let span = v.initial().iter().fold(f64::NEG_INFINITY, |x, y| x.max(*y))
        - v.initial().iter().fold(f64::INFINITY, |x, y| x.min(*y));
    g.iter()
        .enumerate()
        .map(|(i, g)| {
            let (s, a) = (i / a_n, i % a_n);
            let l1 = l1_distance(m_hat.row(s, a), m.row(s, a))?;
            Ok(
                BoundReport::inequality(CheckKind::GInequality, seed, i, g.abs(), 0.5 * v_max * l1)
                    .with_witness(format!("s={s} a={a}"))
                    .with_term("value_span", span),
            )
        })
        .collect()
}

/// `|eta_M(pi*_t) - eta_M(pi*_t1)|` against the three-term bound
/// ```text
/// D(p_t, p_t1)(r_max + V_max) H
///   + (E_{rho_t} l1(p_t, p) + E_{rho_t1} l1(p_t1, p)) gamma V_max / 2
///   + lambda |U_t(pi*_t) - U_t1(pi*_t1)|
/// ```
/// all in finite-horizon mode with horizon `H`. The models must share the
/// true reward table.
#[allow(clippy::too_many_arguments)]
pub fn check_theorem2(
    m: &FiniteMdp,
    m_hat_t: &FiniteMdp,
    m_hat_t1: &FiniteMdp,
    u_t: &UncertaintyTable,
    u_t1: &UncertaintyTable,
    lambda: f64,
    horizon: usize,
    seed: u64,
) -> Result<BoundReport> {
    require_lambda(lambda)?;
    require_same_reward(m, m_hat_t)?;
    require_same_reward(m, m_hat_t1)?;
    check_u(m, u_t)?;
    check_u(m, u_t1)?;
    let m = m.with_horizon(Some(horizon))?;
    let mt = m_hat_t.with_horizon(Some(horizon))?;
    let mt1 = m_hat_t1.with_horizon(Some(horizon))?;
    let a = penalized_optimum(&mt, u_t, lambda)?;
    let b = penalized_optimum(&mt1, u_t1, lambda)?;
    let lhs = (expected_return(&m, &a.policy)? - expected_return(&m, &b.policy)?).abs();

    let pen_t = penalize(&mt, u_t, lambda)?;
    let pen_t1 = penalize(&mt1, u_t1, lambda)?;
    let r_max = r_max_of([m.rewards(), pen_t.rewards(), pen_t1.rewards()]);
    let v_max = r_max * horizon as f64;
    let (d, _) = dynamics_distance(&mt, &mt1)?;
    let dynamics = d * (r_max + v_max) * horizon as f64;

    let model_error = |model: &FiniteMdp, pi: &Policy| -> Result<f64> {
        let rho = occupancy_measure(model, pi)?;
        let (s_n, a_n) = (m.num_states(), m.num_actions());
        let mut total = 0.0;
        for s in 0..s_n {
            for a in 0..a_n {
                total += rho.get(s, a) * l1_distance(model.row(s, a), m.row(s, a))?;
            }
        }
        Ok(total)
    };
    let err_t = model_error(&mt, &a.policy)?;
    let err_t1 = model_error(&mt1, &b.policy)?;
    let model_term = (err_t + err_t1) * 0.5 * m.discount() * v_max;
    let uncertainty = lambda * (a.big_u - b.big_u).abs();
    Ok(
        BoundReport::inequality(CheckKind::Theorem2, seed, 0, lhs, dynamics + model_term + uncertainty)
            .with_term("dynamics", dynamics)
            .with_term("model_error", model_term)
            .with_term("uncertainty", uncertainty),
    )
}

/// `tv(p, q)` against `l1(p, q) / 2`.
pub fn check_tv_identity(p: &[f64], q: &[f64], seed: u64, index: usize) -> Result<BoundReport> {
    let tv = tv_distance(p, q)?;
    let l1 = l1_distance(p, q)?;
    Ok(BoundReport::identity(CheckKind::TvIdentity, seed, index, tv, 0.5 * l1))
}
