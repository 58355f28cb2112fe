//! The two-stage offline-to-online procedure: penalized model-based training
//! on a fixed dataset, then an online loop whose model refits draw from a
//! replay buffer where offline priority decays with the epoch.

mod train;

pub use train::{evaluate, train_offline, train_online, OfflineArtifacts};

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::{Origin, Transition};
use crate::error::{Error, Result};
use crate::mdp::Policy;
use crate::model::{EnsembleModel, UncertaintyTable};
use crate::rng::sample_discrete;

/// How model-fit resamples and rollout start states are drawn from the
/// offline and online data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Proportional to priority: offline `1 / (alpha t)`, online 1.
    Prioritized,
    /// Uniform over all offline and online transitions.
    Uniform,
    /// Exactly half of each batch (rounded up) from offline data, the rest from online.
    HalfHalf,
    /// Online transitions only.
    PureOnline,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Prioritized,
        Scheme::Uniform,
        Scheme::HalfHalf,
        Scheme::PureOnline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Prioritized => "prioritized",
            Scheme::Uniform => "uniform",
            Scheme::HalfHalf => "half_half",
            Scheme::PureOnline => "pure_online",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampling scheme {s:?}")))
    }
}

/// Training hyper-parameters.
///
/// The defaults are sized for desk-scale gridworlds. The corresponding
/// large-scale settings are 100 epochs of 1000 steps, a model refit every 250
/// steps, 100000 rollouts and 20 updates per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Online epochs `T`.
    pub epochs: u32,
    /// Environment steps per epoch `S`.
    pub steps_per_epoch: usize,
    /// Refit the model every `phi` steps within an epoch.
    pub model_update_freq: usize,
    /// Rollout start states per refit `R`.
    pub rollout_batch: usize,
    /// Rollout length `H`.
    pub rollout_length: usize,
    /// Q updates per environment step `N`.
    pub updates_per_step: usize,
    /// Transitions per Q update.
    pub batch_size: usize,
    /// Ensemble size `K`.
    pub ensemble_size: usize,
    /// Dirichlet pseudo-count per next-state cell.
    pub smoothing: f64,
    /// Uncertainty penalty `lambda`.
    pub lambda: f64,
    /// Offline priority decay `alpha`.
    pub alpha: f64,
    pub learning_rate: f64,
    /// Boltzmann temperature for acting and rollouts at epoch 1.
    pub temperature: f64,
    /// Per-epoch multiplicative temperature decay.
    pub temperature_decay: f64,
    /// Capacity of the model-rollout buffer.
    pub model_capacity: usize,
    /// Rollout/update rounds in the offline stage.
    pub offline_rounds: usize,
    /// Q updates per offline round.
    pub offline_updates: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: 200,
            model_update_freq: 50,
            rollout_batch: 2000,
            rollout_length: 5,
            updates_per_step: 5,
            batch_size: 256,
            ensemble_size: 5,
            smoothing: 0.1,
            lambda: 1.0,
            alpha: 1.0,
            learning_rate: 0.1,
            temperature: 0.1,
            temperature_decay: 0.99,
            model_capacity: 100_000,
            offline_rounds: 20,
            offline_updates: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        let counts = [
            self.steps_per_epoch,
            self.model_update_freq,
            self.rollout_batch,
            self.rollout_length,
            self.updates_per_step,
            self.batch_size,
            self.model_capacity,
            self.offline_rounds,
            self.offline_updates,
        ];
        if self.epochs == 0 || counts.contains(&0) {
            return bad("epoch, step, batch, rollout and capacity counts must be positive");
        }
        if self.model_update_freq > self.steps_per_epoch {
            return bad("model_update_freq must not exceed steps_per_epoch");
        }
        if self.ensemble_size < 2 {
            return bad("ensemble_size must be at least 2");
        }
        let positive = [self.smoothing, self.alpha, self.temperature, self.temperature_decay];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("smoothing, alpha, temperature and temperature_decay must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be nonnegative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        Ok(())
    }

    /// Temperature in effect during epoch `t` (1-based).
    pub fn temperature_at(&self, t: u32) -> f64 {
        self.temperature * self.temperature_decay.powi(t.saturating_sub(1) as i32)
    }
}

/// Tabular action values with greedy and Boltzmann read-outs.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
    pub learning_rate: f64,
}

impl QTable {
    pub fn new(num_states: usize, num_actions: usize, learning_rate: f64) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
            learning_rate,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn greedy(&self, s: usize) -> usize {
        let row = self.row(s);
        let best = self.max(s);
        row.iter().position(|q| *q == best).unwrap_or(0)
    }

    pub fn greedy_policy(&self) -> Policy {
        Policy::Deterministic((0..self.num_states).map(|s| self.greedy(s)).collect())
    }

    /// `pi(a|s) proportional to exp(q(s,a) / temperature)`.
    pub fn boltzmann(&self, s: usize, temperature: f64) -> Vec<f64> {
        let row = self.row(s);
        let best = self.max(s);
        let w: Vec<f64> = row.iter().map(|q| ((q - best) / temperature).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    }

    pub fn boltzmann_policy(&self, temperature: f64) -> Policy {
        let mut probs = Vec::with_capacity(self.values.len());
        for s in 0..self.num_states {
            probs.extend(self.boltzmann(s, temperature));
        }
        Policy::Stochastic {
            num_actions: self.num_actions,
            probs,
        }
    }
}

/// One Q-learning step per transition, in batch order:
/// `q <- q + lr (r + gamma max_a' q(s', a') - q)`, bootstrapping 0 past `done`.
pub fn q_update(q: &mut QTable, batch: &[Transition], gamma: f64) {
    let lr = q.learning_rate;
    for t in batch {
        let bootstrap = if t.done { 0.0 } else { q.max(t.next_state) };
        let target = t.reward + gamma * bootstrap;
        let cell = &mut q.values[t.state * q.num_actions + t.action];
        *cell += lr * (target - *cell);
    }
}

/// FIFO store of model-generated transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ModelBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("model buffer capacity must be positive".into()));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.origin != Origin::Model {
            return Err(Error::InvalidArgument(format!(
                "model buffer only stores model transitions, got {}",
                t.origin
            )));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.items.iter()
    }

    /// Uniform draws with replacement.
    pub fn sample<R: rand::Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

/// Model rollouts of length up to `horizon` from each start state under `pi`,
/// with rewards `r_k(s,a) - lambda u(s,a)`. A rollout stops after entering a
/// state the model treats as terminal. The random draws do not depend on
/// `lambda`.
pub fn rollout<R: rand::Rng + ?Sized>(
    model: &EnsembleModel,
    u: &UncertaintyTable,
    pi: &Policy,
    starts: &[usize],
    horizon: usize,
    lambda: f64,
    rng: &mut R,
) -> Vec<Transition> {
    let a_n = model.num_actions();
    let mut out = Vec::with_capacity(starts.len() * horizon);
    let mut probs = vec![0.0; a_n];
    for &start in starts {
        let mut s = start;
        for h in 0..horizon {
            if model.is_terminal(s) {
                break;
            }
            for (a, p) in probs.iter_mut().enumerate() {
                *p = pi.prob(0, s, a);
            }
            let a = sample_discrete(rng, &probs);
            let (next, reward) = model.sample_step(s, a, rng);
            out.push(Transition {
                state: s,
                action: a,
                reward: reward - lambda * u.get(s, a),
                next_state: next,
                done: model.is_terminal(next),
                origin: Origin::Model,
                step_index: h as u32,
            });
            s = next;
        }
    }
    out
}
