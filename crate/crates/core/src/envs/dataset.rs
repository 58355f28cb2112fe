use std::fmt::Write as _;

use super::{BehaviorPolicy, BehaviorTier, EnvStepper, Origin, Transition};
use crate::error::{parse_err, Error, Result};
use crate::rng::sample_discrete;

/// A fixed set of transitions collected by one behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    pub env_id: String,
    pub behavior: BehaviorTier,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Mean undiscounted return of the complete episodes (those that reached a
    /// terminal state or the time limit) in the dataset.
    pub fn mean_episode_return(&self, gamma: f64) -> Option<f64> {
        let mut returns = Vec::new();
        let mut current = 0.0;
        let mut discount = 1.0;
        let n = self.transitions.len();
        for (i, t) in self.transitions.iter().enumerate() {
            current += discount * t.reward;
            discount *= gamma;
            let next_restarts = i + 1 < n && self.transitions[i + 1].step_index == 0;
            if t.done || next_restarts {
                returns.push(current);
                current = 0.0;
                discount = 1.0;
            }
        }
        (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64)
    }
}

/// Rolls the behavior policy in `stepper` for exactly `n` transitions. Each
/// episode picks one mixture component of the behavior policy.
///
/// The stepper should be freshly built from `seed`; the result is then a pure
/// function of `(spec, policy, n, seed)`.
pub fn generate_offline_dataset(
    stepper: &mut EnvStepper,
    env_id: &str,
    policy: &BehaviorPolicy,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let weights: Vec<f64> = policy.components.iter().map(|(w, _)| *w).collect();
    stepper.reset();
    let mut component = sample_discrete(stepper.rng_mut(), &weights);
    let mut transitions = Vec::with_capacity(n);
    while transitions.len() < n {
        let a = stepper.sample_action(&policy.components[component].1);
        let out = stepper.step(a);
        transitions.push(Transition {
            origin: Origin::Offline,
            ..out.transition
        });
        if out.episode_end {
            component = sample_discrete(stepper.rng_mut(), &weights);
        }
    }
    Ok(Dataset {
        transitions,
        env_id: env_id.to_string(),
        behavior: policy.tier,
        seed,
    })
}

/// Text form: header `dataset env_id behavior seed n`, then one line per
/// transition `s a r s' done origin step`.
pub fn write_dataset(data: &Dataset) -> String {
    let mut out = String::with_capacity(32 * data.len() + 64);
    writeln!(
        out,
        "dataset {} {} {} {}",
        data.env_id,
        data.behavior,
        data.seed,
        data.len()
    )
    .unwrap();
    for t in &data.transitions {
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            t.state,
            t.action,
            t.reward,
            t.next_state,
            u8::from(t.done),
            t.origin,
            t.step_index
        )
        .unwrap();
    }
    out
}

pub fn read_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (n0, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let f: Vec<&str> = header.split_whitespace().collect();
    if f.len() != 5 || f[0] != "dataset" {
        return Err(parse_err(n0, "header must be `dataset env_id behavior seed n`"));
    }
    let behavior: BehaviorTier = f[2].parse().map_err(|e: Error| parse_err(n0, e.to_string()))?;
    let seed: u64 = f[3].parse().map_err(|_| parse_err(n0, "bad seed"))?;
    let count: usize = f[4].parse().map_err(|_| parse_err(n0, "bad count"))?;
    let mut transitions = Vec::with_capacity(count);
    for (n, line) in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 7 {
            return Err(parse_err(n, "expected `s a r s' done origin step`"));
        }
        let int = |i: usize| {
            t[i].parse::<usize>()
                .map_err(|_| parse_err(n, format!("bad integer {:?}", t[i])))
        };
        let done = match t[4] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(n, format!("bad done flag {other:?}"))),
        };
        transitions.push(Transition {
            state: int(0)?,
            action: int(1)?,
            reward: t[2].parse().map_err(|_| parse_err(n, "bad reward"))?,
            next_state: int(3)?,
            done,
            origin: t[5].parse().map_err(|e: Error| parse_err(n, e.to_string()))?,
            step_index: t[6].parse().map_err(|_| parse_err(n, "bad step index"))?,
        });
    }
    if transitions.len() != count {
        return Err(parse_err(
            n0,
            format!("header announces {count} transitions, found {}", transitions.len()),
        ));
    }
    Ok(Dataset {
        transitions,
        env_id: f[1].to_string(),
        behavior,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, make_behavior_policy, EnvSpec};
    use crate::mdp::expected_return;

    fn dataset(tier: BehaviorTier, n: usize, seed: u64) -> Dataset {
        let spec = EnvSpec::gridworld(5, 0.1);
        let (mdp, mut stepper) = build_env(&spec, seed).unwrap();
        let pi = make_behavior_policy(&mdp, tier, seed).unwrap();
        generate_offline_dataset(&mut stepper, &spec.env_id(), &pi, n, seed).unwrap()
    }

    #[test]
    fn single_transition_starts_at_mu0() {
        let d = dataset(BehaviorTier::Random, 1, 4);
        assert_eq!(d.len(), 1);
        assert_eq!(d.transitions[0].state, 0);
        assert_eq!(d.transitions[0].step_index, 0);
        assert_eq!(d.transitions[0].origin, Origin::Offline);
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(
            dataset(BehaviorTier::MediumReplay, 500, 9),
            dataset(BehaviorTier::MediumReplay, 500, 9)
        );
        assert_ne!(
            dataset(BehaviorTier::Medium, 500, 9),
            dataset(BehaviorTier::Medium, 500, 10)
        );
    }

    #[test]
    fn episodes_respect_time_limit() {
        let d = dataset(BehaviorTier::Random, 3000, 1);
        assert!(d.transitions.iter().all(|t| (t.step_index as usize) < 50));
    }

    #[test]
    fn expert_returns_match_exact_eta() {
        let spec = EnvSpec::gridworld(5, 0.1);
        let (mdp, _) = build_env(&spec, 0).unwrap();
        let pi = make_behavior_policy(&mdp, BehaviorTier::Expert, 0).unwrap();
        let exact = expected_return(&mdp, &pi.components[0].1).unwrap();
        let d = dataset(BehaviorTier::Expert, 5000, 2);
        let empirical = d.mean_episode_return(spec.discount).unwrap();
        assert!(
            (empirical - exact).abs() <= 0.1 * exact.abs(),
            "empirical {empirical} vs exact {exact}"
        );
    }

    #[test]
    fn text_round_trip() {
        let d = dataset(BehaviorTier::Medium, 200, 3);
        assert_eq!(read_dataset(&write_dataset(&d)).unwrap(), d);
        assert!(read_dataset("dataset x medium 1 2\n0 0 0 1 0 offline 0\n").is_err());
        assert!(read_dataset("dataset x medium 1 1\n0 0 0 1 2 offline 0\n").is_err());
    }
}
