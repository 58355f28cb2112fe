//! Run configuration, paired-seed ablations over sampling schemes and the
//! priority decay, transfer statistics, and report files.

mod metrics;
mod report;

pub use metrics::{parse_metrics_rows, EpochMetrics, MetricsLog, METRICS_COLUMNS};
pub use report::{emit_report, summarize_schemes, SchemeSummary};

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{train_offline, train_online, OfflineArtifacts, Scheme, TrainConfig};
use crate::envs::{build_env, generate_offline_dataset, make_behavior_policy, BehaviorTier, Dataset, EnvSpec};
use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::rng::mix;

/// The decay values of the robustness sweep.
pub const ALPHA_GRID: [f64; 7] = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0];

/// Epochs inspected for the transfer dip.
pub const DIP_WINDOW: usize = 5;

/// Full description of an experiment, read from TOML.
///
/// ```toml
/// tier = "medium"
/// n_offline = 2000
/// seeds = [0, 1, 2, 3, 4]
/// schemes = ["prioritized", "pure_online"]
///
/// [env]
/// family = { kind = "gridworld", size = 5 }
/// slip = 0.1
/// horizon = 50
/// discount = 0.95
///
/// [train]
/// epochs = 30
/// alpha = 1.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub tier: BehaviorTier,
    /// Offline dataset size.
    pub n_offline: usize,
    pub seeds: Vec<u64>,
    pub schemes: Vec<Scheme>,
    /// Decay values for the alpha sweep.
    pub alphas: Vec<f64>,
    /// Output root; falls back to `MOORE_OUT_DIR`, then `out`.
    pub out_dir: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::gridworld(5, 0.1),
            tier: BehaviorTier::Medium,
            n_offline: 2000,
            seeds: (0..5).collect(),
            schemes: Scheme::ALL.to_vec(),
            alphas: ALPHA_GRID.to_vec(),
            out_dir: None,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        if self.n_offline == 0 {
            return Err(Error::Config("n_offline must be positive".into()));
        }
        if self.seeds.is_empty() || self.schemes.is_empty() {
            return Err(Error::Config("seeds and schemes must be nonempty".into()));
        }
        check_alphas(&self.alphas)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os("MOORE_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn train_for(&self, seed: u64, alpha: f64) -> TrainConfig {
        TrainConfig {
            seed,
            alpha,
            ..self.train.clone()
        }
    }
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Config("alpha list must be nonempty".into()));
    }
    match alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        Some(a) => Err(Error::Config(format!("alpha must be positive, got {a}"))),
        None => Ok(()),
    }
}

/// Everything shared by the runs of one seed: the environment, the offline
/// dataset and the offline stage's output.
#[derive(Debug, Clone)]
pub struct SeedSetup {
    pub seed: u64,
    pub env: FiniteMdp,
    pub data: Dataset,
    pub artifacts: OfflineArtifacts,
}

/// The exact environment and the offline dataset of `seed`.
pub fn offline_dataset(cfg: &RunConfig, seed: u64) -> Result<(FiniteMdp, Dataset)> {
    let (env, mut stepper) = build_env(&cfg.env, mix(seed, 0xda7a))?;
    let behavior = make_behavior_policy(&env, cfg.tier, seed)?;
    let data = generate_offline_dataset(&mut stepper, &cfg.env.env_id(), &behavior, cfg.n_offline, seed)?;
    Ok((env, data))
}

/// Generates the offline dataset of `seed` and runs the offline stage.
pub fn prepare_seed(cfg: &RunConfig, seed: u64) -> Result<SeedSetup> {
    let (env, data) = offline_dataset(cfg, seed)?;
    let artifacts = train_offline(&data, &env, &cfg.train_for(seed, cfg.train.alpha))?;
    Ok(SeedSetup {
        seed,
        env,
        data,
        artifacts,
    })
}

/// Online stage of one cell. The stepper seed depends only on the run seed,
/// so cells of the same seed see the same environment randomness stream.
pub fn run_cell(cfg: &RunConfig, setup: &SeedSetup, scheme: Scheme, alpha: f64) -> Result<MetricsLog> {
    let (_, stepper) = build_env(&cfg.env, mix(setup.seed, 0x0e))?;
    train_online(
        &setup.artifacts,
        &setup.data,
        stepper,
        &cfg.train_for(setup.seed, alpha),
        scheme,
    )
}

fn prepare_all(cfg: &RunConfig) -> Result<Vec<SeedSetup>> {
    cfg.validate()?;
    cfg.seeds.par_iter().map(|&s| prepare_seed(cfg, s)).collect()
}

/// Runs every configured scheme on every seed at `cfg.train.alpha`. Schemes
/// of the same seed share the dataset, the offline stage and the stepper seed.
/// Logs come back ordered by scheme, then seed.
pub fn run_ablation_schemes(cfg: &RunConfig) -> Result<Vec<MetricsLog>> {
    let setups = prepare_all(cfg)?;
    let cells: Vec<(Scheme, &SeedSetup)> = cfg
        .schemes
        .iter()
        .flat_map(|&scheme| setups.iter().map(move |s| (scheme, s)))
        .collect();
    cells
        .par_iter()
        .map(|(scheme, setup)| run_cell(cfg, setup, *scheme, cfg.train.alpha))
        .collect()
}

/// Runs the prioritized scheme for every alpha on every seed, ordered by
/// alpha, then seed.
pub fn run_alpha_sweep(cfg: &RunConfig, alphas: &[f64]) -> Result<Vec<MetricsLog>> {
    check_alphas(alphas)?;
    let setups = prepare_all(cfg)?;
    let cells: Vec<(f64, &SeedSetup)> = alphas
        .iter()
        .flat_map(|&a| setups.iter().map(move |s| (a, s)))
        .collect();
    cells
        .par_iter()
        .map(|(alpha, setup)| run_cell(cfg, setup, Scheme::Prioritized, *alpha))
        .collect()
}

/// Summary of how a run moved away from the offline policy's return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMetrics {
    /// `max(0, eta_off - min(eta))` over the first [`DIP_WINDOW`] epochs.
    pub dip: f64,
    /// First epoch, at or after the lowest point of the dip window, whose
    /// return is back at `eta_off`; `T + 1` if it never is.
    pub epochs_to_recover: u32,
    /// First epoch whose return reaches `threshold`; `T + 1` if none does.
    pub epochs_to_threshold: u32,
}

pub fn compute_transfer_metrics(etas: &[f64], eta_off: f64, threshold: f64) -> Result<TransferMetrics> {
    if etas.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let never = etas.len() as u32 + 1;
    let window = &etas[..etas.len().min(DIP_WINDOW)];
    let (low_at, low) =
        window.iter().copied().enumerate().fold(
            (0, f64::INFINITY),
            |best, (i, v)| if v < best.1 { (i, v) } else { best },
        );
    let first_from = |from: usize, level: f64| {
        etas[from..]
            .iter()
            .position(|&v| v >= level)
            .map_or(never, |i| (from + i + 1) as u32)
    };
    Ok(TransferMetrics {
        dip: (eta_off - low).max(0.0),
        epochs_to_recover: first_from(low_at, eta_off),
        epochs_to_threshold: first_from(0, threshold),
    })
}

/// `fraction` of `best`, measured so that it lies below `best` for negative
/// returns as well.
pub fn threshold_of(best: f64, fraction: f64) -> f64 {
    best - (1.0 - fraction) * best.abs()
}

/// Median; the mean of the middle pair for even lengths. NaN for empty input.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}
