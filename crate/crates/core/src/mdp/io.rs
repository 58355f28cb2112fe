//! Line-oriented MDP text format:
//!
//! ```text
//! mdp S A gamma horizon        # horizon is `none` or a positive integer
//! mu0_0 ... mu0_{S-1}
//! r p_0 ... p_{S-1}            # one line per (s, a), s-major
//! ```
//!
//! Reals are written in shortest round-trip form, so save/load is bit-exact.
//! Terminal flags are not stored; on load, a state whose every action
//! self-loops with probability 1 and reward 0 is marked terminal.

use std::fmt::Write as _;

use super::FiniteMdp;
use crate::error::{parse_err, Result};

pub fn write_mdp(mdp: &FiniteMdp) -> String {
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let mut out = String::new();
    let horizon = mdp.horizon().map_or_else(|| "none".to_string(), |h| h.to_string());
    writeln!(out, "mdp {s_n} {a_n} {} {horizon}", mdp.discount()).unwrap();
    out.push_str(&join(mdp.initial_dist()));
    out.push('\n');
    for s in 0..s_n {
        for a in 0..a_n {
            write!(out, "{} ", mdp.reward(s, a)).unwrap();
            out.push_str(&join(mdp.row(s, a)));
            out.push('\n');
        }
    }
    out
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_reals(line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|e| parse_err(line_no, format!("bad real {tok:?}: {e}")))
        })
        .collect()
}

/// Parses the text format. Blank lines and `#` comments are skipped.
pub fn read_mdp(text: &str) -> Result<FiniteMdp> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (n, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "mdp" {
        return Err(parse_err(n, "header must be `mdp S A gamma horizon`"));
    }
    let s_n: usize = fields[1].parse().map_err(|_| parse_err(n, "bad state count"))?;
    let a_n: usize = fields[2].parse().map_err(|_| parse_err(n, "bad action count"))?;
    let gamma: f64 = fields[3].parse().map_err(|_| parse_err(n, "bad discount"))?;
    let horizon = match fields[4] {
        "none" | "-" => None,
        h => Some(h.parse::<usize>().map_err(|_| parse_err(n, "bad horizon"))?),
    };

    let (n, mu_line) = lines
        .next()
        .ok_or_else(|| parse_err(n + 1, "missing initial distribution"))?;
    let mu0 = parse_reals(n, mu_line)?;
    if mu0.len() != s_n {
        return Err(parse_err(n, format!("expected {s_n} initial probabilities")));
    }

    let mut transition = Vec::with_capacity(s_n * a_n * s_n);
    let mut reward = Vec::with_capacity(s_n * a_n);
    for _ in 0..s_n * a_n {
        let (n, line) = lines.next().ok_or_else(|| parse_err(n, "missing transition rows"))?;
        let vals = parse_reals(n, line)?;
        if vals.len() != s_n + 1 {
            return Err(parse_err(n, format!("expected reward plus {s_n} probabilities")));
        }
        reward.push(vals[0]);
        transition.extend_from_slice(&vals[1..]);
    }
    if let Some((n, _)) = lines.next() {
        return Err(parse_err(n, "trailing content after transition rows"));
    }

    let terminal = (0..s_n)
        .map(|s| {
            (0..a_n).all(|a| {
                let base = (s * a_n + a) * s_n;
                transition[base + s] == 1.0 && reward[s * a_n + a] == 0.0
            })
        })
        .collect();
    FiniteMdp::new(s_n, a_n, transition, reward, mu0, gamma, horizon, terminal)
}
