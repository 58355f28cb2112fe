//! Desk-scale environments and offline datasets at four behavior-quality tiers.

mod dataset;
mod grid;

pub use dataset::{generate_offline_dataset, read_dataset, write_dataset, Dataset};
pub use grid::{build_env, EnvFamily, EnvSpec};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{value_iteration_discounted, FiniteMdp, Policy};
use crate::rng::{sample_discrete, stream, Rng};

/// Where a transition came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Offline,
    Online,
    Model,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Offline => "offline",
            Origin::Online => "online",
            Origin::Model => "model",
        })
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Origin::Offline),
            "online" => Ok(Origin::Online),
            "model" => Ok(Origin::Model),
            other => Err(Error::InvalidArgument(format!("unknown origin {other:?}"))),
        }
    }
}

/// One environment step. `done` is set only when `next_state` is terminal;
/// time-limit truncation shows up as `step_index` restarting at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
    pub origin: Origin,
    pub step_index: u32,
}

/// Quality tier of the behavior policy that produced an offline dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorTier {
    Random,
    Medium,
    MediumReplay,
    Expert,
}

impl BehaviorTier {
    pub const ALL: [BehaviorTier; 4] = [
        BehaviorTier::Random,
        BehaviorTier::Medium,
        BehaviorTier::MediumReplay,
        BehaviorTier::Expert,
    ];
}

impl fmt::Display for BehaviorTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BehaviorTier::Random => "random",
            BehaviorTier::Medium => "medium",
            BehaviorTier::MediumReplay => "medium_replay",
            BehaviorTier::Expert => "expert",
        })
    }
}

impl FromStr for BehaviorTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "random" => Ok(BehaviorTier::Random),
            "medium" => Ok(BehaviorTier::Medium),
            "medium_replay" => Ok(BehaviorTier::MediumReplay),
            "expert" => Ok(BehaviorTier::Expert),
            other => Err(Error::InvalidArgument(format!("unknown behavior tier {other:?}"))),
        }
    }
}

/// Exploration rate of the medium tier around the optimal action.
pub const MEDIUM_EPSILON: f64 = 0.4;

/// A behavior policy as a per-episode mixture: each episode picks one
/// component with the given weight and follows it throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorPolicy {
    pub tier: BehaviorTier,
    pub components: Vec<(f64, Policy)>,
}

impl BehaviorPolicy {
    pub fn single(tier: BehaviorTier, policy: Policy) -> Self {
        Self {
            tier,
            components: vec![(1.0, policy)],
        }
    }
}

/// Behavior policy for a tier: uniform (random), greedy optimal (expert),
/// epsilon-greedy around optimal with epsilon 0.4 (medium), or an even
/// per-episode mixture of random and medium (medium_replay).
///
/// Deterministic given the MDP; `_seed` is accepted for interface symmetry
/// with tiers that might randomize their construction.
pub fn make_behavior_policy(env: &FiniteMdp, tier: BehaviorTier, _seed: u64) -> Result<BehaviorPolicy> {
    let (s_n, a_n) = (env.num_states(), env.num_actions());
    let random = Policy::uniform(s_n, a_n);
    let optimal = || -> Result<Vec<usize>> {
        let mdp = env.with_horizon(None)?;
        match value_iteration_discounted(&mdp, 1e-10)?.1 {
            Policy::Deterministic(actions) => Ok(actions),
            _ => unreachable!("discounted value iteration returns a deterministic policy"),
        }
    };
    let medium = |best: &[usize]| {
        let mut probs = vec![MEDIUM_EPSILON / a_n as f64; s_n * a_n];
        for (s, a) in best.iter().enumerate() {
            probs[s * a_n + a] += 1.0 - MEDIUM_EPSILON;
        }
        Policy::Stochastic {
            num_actions: a_n,
            probs,
        }
    };
    Ok(match tier {
        BehaviorTier::Random => BehaviorPolicy::single(tier, random),
        BehaviorTier::Expert => BehaviorPolicy::single(tier, Policy::Deterministic(optimal()?)),
        BehaviorTier::Medium => BehaviorPolicy::single(tier, medium(&optimal()?)),
        BehaviorTier::MediumReplay => BehaviorPolicy {
            tier,
            components: vec![(0.5, random), (0.5, medium(&optimal()?))],
        },
    })
}

/// Samples transitions from an exact MDP with its own RNG stream.
///
/// Rewards are the MDP's `r(s, a)`. Episodes end on reaching a terminal state
/// or after `horizon` steps.
#[derive(Debug, Clone)]
pub struct EnvStepper {
    mdp: FiniteMdp,
    horizon: usize,
    rng: Rng,
    state: usize,
    step_index: u32,
}

/// Outcome of one [`EnvStepper::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub transition: Transition,
    /// The episode ended (terminal reached or time limit hit) and the stepper
    /// has already reset.
    pub episode_end: bool,
}

impl EnvStepper {
    pub fn new(mdp: FiniteMdp, horizon: usize, seed: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("episode horizon must be positive".into()));
        }
        let mut stepper = Self {
            mdp,
            horizon,
            rng: stream(seed, 0x5e9),
            state: 0,
            step_index: 0,
        };
        stepper.reset();
        Ok(stepper)
    }

    pub fn mdp(&self) -> &FiniteMdp {
        &self.mdp
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Starts a new episode from `mu0` and returns its first state.
    pub fn reset(&mut self) -> usize {
        self.state = sample_discrete(&mut self.rng, self.mdp.initial_dist());
        self.step_index = 0;
        self.state
    }

    pub fn step(&mut self, action: usize) -> StepOutcome {
        let s = self.state;
        let next = sample_discrete(&mut self.rng, self.mdp.row(s, action));
        let done = self.mdp.is_terminal(next);
        let transition = Transition {
            state: s,
            action,
            reward: self.mdp.reward(s, action),
            next_state: next,
            done,
            origin: Origin::Online,
            step_index: self.step_index,
        };
        self.step_index += 1;
        self.state = next;
        let episode_end = done || self.step_index as usize >= self.horizon;
        if episode_end {
            self.reset();
        }
        StepOutcome {
            transition,
            episode_end,
        }
    }

    /// Draws an action from `pi(. | current state)` using the stepper's RNG.
    pub fn sample_action(&mut self, pi: &Policy) -> usize {
        let a_n = self.mdp.num_actions();
        let probs: Vec<f64> = (0..a_n).map(|a| pi.prob(0, self.state, a)).collect();
        sample_discrete(&mut self.rng, &probs)
    }

    pub(crate) fn rng_mut(&mut self) -> &mut Rng {
        &mut self.rng
    }
}
