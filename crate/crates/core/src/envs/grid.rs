use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EnvStepper;
use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EnvFamily {
    /// `size x size` grid; start in the top-left corner, goal in the bottom-right.
    /// Actions: up, right, down, left. Moving into a wall leaves the agent in place.
    Gridworld { size: usize },
    /// States `0..length`; start at 0, goal at `length - 1`. Actions: left, right.
    Chain { length: usize },
}

/// Environment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub family: EnvFamily,
    /// Probability that the executed move is drawn uniformly from all moves
    /// instead of the chosen one.
    pub slip: f64,
    /// Episode length limit for the sampling stepper.
    pub horizon: usize,
    pub discount: f64,
    /// Reward for a step that does not enter the goal.
    #[serde(default = "default_step_reward")]
    pub step_reward: f64,
    /// Reward for a step that enters the goal.
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
}

fn default_step_reward() -> f64 {
    -0.01
}

fn default_goal_reward() -> f64 {
    1.0
}

impl EnvSpec {
    pub fn gridworld(size: usize, slip: f64) -> Self {
        Self {
            family: EnvFamily::Gridworld { size },
            slip,
            horizon: 50,
            discount: 0.95,
            step_reward: default_step_reward(),
            goal_reward: default_goal_reward(),
        }
    }

    pub fn chain(length: usize, slip: f64) -> Self {
        Self {
            family: EnvFamily::Chain { length },
            slip,
            horizon: 4 * length,
            discount: 0.95,
            step_reward: default_step_reward(),
            goal_reward: default_goal_reward(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let size_ok = match self.family {
            EnvFamily::Gridworld { size } => size >= 2,
            EnvFamily::Chain { length } => length >= 2,
        };
        if !size_ok {
            return Err(Error::InvalidArgument(
                "environment needs at least 2 cells per side".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.slip) {
            return Err(Error::InvalidArgument(format!("slip {} outside [0, 1)", self.slip)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("episode horizon must be at least 1".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "discount {} outside (0, 1)",
                self.discount
            )));
        }
        if !(self.step_reward.is_finite() && self.goal_reward.is_finite()) {
            return Err(Error::InvalidArgument("rewards must be finite".into()));
        }
        Ok(())
    }

    /// Identifier such as `gridworld-5x5` or `chain-6`.
    pub fn env_id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            EnvFamily::Gridworld { size } => write!(f, "gridworld-{size}x{size}"),
            EnvFamily::Chain { length } => write!(f, "chain-{length}"),
        }
    }
}

/// Parses `gridworld`, `gridworld:N`, `gridworld-NxN`, `chain`, `chain:N` or
/// `chain-N` into an [`EnvSpec`] with default slip 0.1.
impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, size) = match s.split_once([':', '-']) {
            Some((name, rest)) => {
                let n = rest.split('x').next().unwrap_or(rest);
                let n = n
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad environment size in {s:?}")))?;
                (name, Some(n))
            }
            None => (s, None),
        };
        match name {
            "gridworld" => Ok(EnvSpec::gridworld(size.unwrap_or(5), 0.1)),
            "chain" => Ok(EnvSpec::chain(size.unwrap_or(6), 0.1)),
            other => Err(Error::InvalidArgument(format!("unknown environment {other:?}"))),
        }
    }
}

/// Builds the exact MDP and a stepper seeded with `seed`.
pub fn build_env(spec: &EnvSpec, seed: u64) -> Result<(FiniteMdp, EnvStepper)> {
    let mdp = build_mdp(spec)?;
    let stepper = EnvStepper::new(mdp.clone(), spec.horizon, seed)?;
    Ok((mdp, stepper))
}

/// Deterministic move on the cell index.
type Move = Box<dyn Fn(usize) -> usize>;

pub(crate) fn build_mdp(spec: &EnvSpec) -> Result<FiniteMdp> {
    spec.validate()?;
    // moves[a] maps a cell to its neighbour under move a
    let (num_states, moves): (usize, Vec<Move>) = match spec.family {
        EnvFamily::Gridworld { size } => (
            size * size,
            vec![
                Box::new(move |c| if c >= size { c - size } else { c }),
                Box::new(move |c| if c % size + 1 < size { c + 1 } else { c }),
                Box::new(move |c| if c + size < size * size { c + size } else { c }),
                Box::new(move |c| if c % size > 0 { c - 1 } else { c }),
            ],
        ),
        EnvFamily::Chain { length } => (
            length,
            vec![
                Box::new(|c: usize| c.saturating_sub(1)),
                Box::new(move |c| (c + 1).min(length - 1)),
            ],
        ),
    };
    let num_actions = moves.len();
    let goal = num_states - 1;
    let mut transition = vec![0.0; num_states * num_actions * num_states];
    let mut reward = vec![0.0; num_states * num_actions];
    for s in 0..num_states {
        for a in 0..num_actions {
            let row = &mut transition[(s * num_actions + a) * num_states..][..num_states];
            if s == goal {
                row[s] = 1.0;
                continue;
            }
            row[moves[a](s)] += 1.0 - spec.slip;
            for m in &moves {
                row[m(s)] += spec.slip / num_actions as f64;
            }
            let p_goal = row[goal];
            reward[s * num_actions + a] = p_goal * spec.goal_reward + (1.0 - p_goal) * spec.step_reward;
        }
    }
    let mut initial = vec![0.0; num_states];
    initial[0] = 1.0;
    let mut terminal = vec![false; num_states];
    terminal[goal] = true;
    FiniteMdp::new(
        num_states,
        num_actions,
        transition,
        reward,
        initial,
        spec.discount,
        None,
        terminal,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::l1_distance;
    use crate::rng::stream;
    use rand::Rng as _;

    #[test]
    fn deterministic_grid_rows_are_point_masses() {
        let (mdp, _) = build_env(&EnvSpec::gridworld(5, 0.0), 0).unwrap();
        for s in 0..25 {
            for a in 0..4 {
                assert_eq!(mdp.row(s, a).iter().filter(|p| **p == 1.0).count(), 1);
            }
        }
        // right from the top-left corner
        assert_eq!(mdp.row(0, 1)[1], 1.0);
        // up from the top-left corner bumps the wall
        assert_eq!(mdp.row(0, 0)[0], 1.0);
    }

    #[test]
    fn chain_rows_normalized() {
        let (mdp, _) = build_env(&EnvSpec::chain(6, 0.1), 0).unwrap();
        for s in 0..6 {
            for a in 0..2 {
                assert!((mdp.row(s, a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(mdp.is_terminal(5));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(build_env(&EnvSpec::gridworld(5, 1.0), 0).is_err());
        assert!(build_env(&EnvSpec::gridworld(1, 0.1), 0).is_err());
        let mut spec = EnvSpec::chain(4, 0.0);
        spec.horizon = 0;
        assert!(build_env(&spec, 0).is_err());
    }

    #[test]
    fn parses_env_names() {
        assert_eq!("gridworld".parse::<EnvSpec>().unwrap(), EnvSpec::gridworld(5, 0.1));
        assert_eq!("gridworld-4x4".parse::<EnvSpec>().unwrap(), EnvSpec::gridworld(4, 0.1));
        assert_eq!("chain:8".parse::<EnvSpec>().unwrap(), EnvSpec::chain(8, 0.1));
        assert_eq!(EnvSpec::gridworld(5, 0.1).env_id(), "gridworld-5x5");
        assert!("maze".parse::<EnvSpec>().is_err());
    }

    #[test]
    fn empirical_frequencies_match_rows() {
        let (mdp, mut stepper) = build_env(&EnvSpec::gridworld(4, 0.2), 11).unwrap();
        let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
        let mut counts = vec![0u32; s_n * a_n * s_n];
        let mut rng = stream(5, 0);
        // 1e6 steps: at 1e5 the ~1.5k visits per row leave an expected
        // multinomial l1 deviation near 0.02 on their own
        for _ in 0..1_000_000 {
            let a = rng.random_range(0..a_n);
            let t = stepper.step(a).transition;
            counts[(t.state * a_n + t.action) * s_n + t.next_state] += 1;
        }
        let mut checked = 0;
        for s in 0..s_n {
            for a in 0..a_n {
                let row = &counts[(s * a_n + a) * s_n..][..s_n];
                let n: u32 = row.iter().sum();
                if n < 1000 {
                    continue;
                }
                let freq: Vec<f64> = row.iter().map(|c| *c as f64 / n as f64).collect();
                let gap = l1_distance(&freq, mdp.row(s, a)).unwrap();
                assert!(gap < 0.02, "row ({s}, {a}) over {n} visits: l1 gap {gap}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }
}
