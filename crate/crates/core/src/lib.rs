//! Model-based offline-to-online reinforcement learning on exactly solvable
//! finite MDPs.
//!
//! The crate has two halves. The learning side ([`envs`], [`model`],
//! [`replay`], [`agent`], [`experiment`]) runs the two-stage procedure: an
//! uncertainty-penalized model-based offline stage, followed by an online
//! stage whose model refits draw from a replay buffer where offline
//! transitions carry priority `1/(alpha * t)` and online ones priority `1`.
//! The analysis side ([`mdp`], [`theory`]) solves every MDP involved exactly
//! and checks the performance-gap bounds that motivate the priority scheme.

pub mod agent;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod model;
pub mod replay;
pub mod rng;
pub mod theory;

pub use agent::{ModelBuffer, QTable, Scheme, TrainConfig};
pub use envs::{BehaviorTier, Dataset, EnvSpec, Origin, Transition};
pub use error::{Error, Result};
pub use experiment::{MetricsLog, RunConfig};
pub use mdp::{FiniteMdp, OccupancyMeasure, Policy, ValueTable};
pub use model::{EnsembleModel, UncertaintyTable};
pub use replay::PriorityBuffer;
pub use theory::{BoundReport, CheckKind, MdpPair};
