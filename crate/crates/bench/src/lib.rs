//! Fixtures shared by the benchmarks.

use moore_core::experiment::offline_dataset;
use moore_core::rng::stream;
use moore_core::theory::{random_mdp, VerifyConfig};
use moore_core::{Dataset, FiniteMdp, Origin, PriorityBuffer, RunConfig, Transition};

fn transition(origin: Origin, i: usize) -> Transition {
    Transition {
        state: i % 25,
        action: i % 4,
        reward: 0.0,
        next_state: (i + 1) % 25,
        done: false,
        origin,
        step_index: 0,
    }
}

/// Buffer with `n_off` offline entries, then `n_on` online entries added at epoch 2.
pub fn priority_buffer(n_off: usize, n_on: usize) -> PriorityBuffer {
    let mut buffer = PriorityBuffer::new(1.0, None).expect("valid alpha");
    for i in 0..n_off {
        buffer.add(transition(Origin::Offline, i)).expect("offline add");
    }
    buffer.set_epoch(2).expect("forward epoch");
    for i in 0..n_on {
        buffer.add(transition(Origin::Online, i)).expect("online add");
    }
    buffer
}

/// Random discounted MDP with Dirichlet(1) rows.
pub fn mdp(states: usize, actions: usize, seed: u64) -> FiniteMdp {
    random_mdp(&mut stream(seed, 0xbe), states, actions, 0.95).expect("valid sizes")
}

/// The 5x5 gridworld and a medium-tier dataset of `n` transitions.
pub fn gridworld_data(n: usize, seed: u64) -> (FiniteMdp, Dataset) {
    let cfg = RunConfig {
        n_offline: n,
        ..RunConfig::default()
    };
    offline_dataset(&cfg, seed).expect("default config is valid")
}

/// Verification batch over `seeds` seeds at the default instance sizes.
pub fn verify_config(seeds: u64) -> VerifyConfig {
    VerifyConfig {
        seeds,
        ..VerifyConfig::default()
    }
}
