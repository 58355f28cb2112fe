use super::{FiniteMdp, PROB_TOL};
use crate::error::{Error, Result};

fn check_distributions(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let total: f64 = v.iter().sum();
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidArgument(format!(
                "{name} is not a probability vector (sum {total})"
            )));
        }
    }
    Ok(())
}

#[inline]
pub(crate) fn l1_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// `sum_i |p_i - q_i|`, in `[0, 2]` for probability vectors.
pub fn l1_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distributions(p, q)?;
    Ok(l1_unchecked(p, q))
}

/// Total variation distance; on a finite space it is exactly half the l1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(0.5 * l1_distance(p, q)?)
}

/// `max_{(s,a)} l1(p1(.|s,a), p2(.|s,a))` together with the maximizing pair
/// (the first one in `(s, a)` order on ties).
pub fn dynamics_distance(m1: &FiniteMdp, m2: &FiniteMdp) -> Result<(f64, (usize, usize))> {
    m1.check_same_shape(m2)?;
    let mut best = (0.0, (0, 0));
    for s in 0..m1.num_states() {
        for a in 0..m1.num_actions() {
            let d = l1_unchecked(m1.row(s, a), m2.row(s, a));
            if d > best.0 {
                best = (d, (s, a));
            }
        }
    }
    Ok(best)
}
