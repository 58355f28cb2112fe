use std::time::Instant;

use rand::Rng as _;

use super::{q_update, rollout, ModelBuffer, QTable, Scheme, TrainConfig};
use crate::envs::{Dataset, EnvStepper, Origin, Transition};
use crate::error::{Error, Result};
use crate::experiment::{EpochMetrics, MetricsLog};
use crate::mdp::{expected_return, value_iteration_discounted, FiniteMdp, Policy};
use crate::model::{fit_ensemble, policy_uncertainty, EnsembleModel, UncertaintyTable};
use crate::replay::{expected_offline_fraction, PriorityBuffer};
use crate::rng::{mix, sample_discrete, stream, Rng};

// stream labels, one per consumer of randomness
const FIT: u64 = 0xf1;
const ROLLOUT: u64 = 0x7011;
const BATCH: u64 = 0xba7;
const ACT: u64 = 0xac7;
const STARTS: u64 = 0x57a;

/// Convergence tolerance for the value iterations behind the per-epoch
/// uncertainty metrics.
const METRIC_VI_TOL: f64 = 1e-10;

/// Output of [`train_offline`], the starting point of the online stage.
#[derive(Debug, Clone)]
pub struct OfflineArtifacts {
    /// Greedy policy on `q`.
    pub policy: Policy,
    pub q: QTable,
    pub ensemble: EnsembleModel,
    pub uncertainty: UncertaintyTable,
    pub model_buffer: ModelBuffer,
}

/// Exact return of `pi` on `mdp`.
pub fn evaluate(pi: &Policy, mdp: &FiniteMdp) -> Result<f64> {
    expected_return(mdp, pi)
}

/// Penalized model-based training on `d_off` alone.
///
/// Fits the ensemble on uniformly weighted offline data, then alternates
/// rollouts from dataset states under the Boltzmann policy with batches of Q
/// updates drawn from the model buffer. `env` supplies only the shape,
/// discount and start distribution.
pub fn train_offline(d_off: &Dataset, env: &FiniteMdp, cfg: &TrainConfig) -> Result<OfflineArtifacts> {
    cfg.validate()?;
    if d_off.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (s_n, a_n) = (env.num_states(), env.num_actions());
    let weights = vec![1.0; d_off.len()];
    let ensemble = fit_ensemble(
        &d_off.transitions,
        &weights,
        s_n,
        a_n,
        cfg.ensemble_size,
        cfg.smoothing,
        mix(cfg.seed, FIT),
    )?;
    let u = ensemble.uncertainty();
    let mut q = QTable::new(s_n, a_n, cfg.learning_rate);
    let mut d_model = ModelBuffer::new(cfg.model_capacity)?;
    let mut start_rng = stream(cfg.seed, STARTS);
    let mut roll_rng = stream(cfg.seed, ROLLOUT);
    let mut batch_rng = stream(cfg.seed, BATCH);
    for _ in 0..cfg.offline_rounds {
        let starts: Vec<usize> = (0..cfg.rollout_batch)
            .map(|_| d_off.transitions[start_rng.random_range(0..d_off.len())].state)
            .collect();
        let pi = q.boltzmann_policy(cfg.temperature);
        for t in rollout(
            &ensemble,
            &u,
            &pi,
            &starts,
            cfg.rollout_length,
            cfg.lambda,
            &mut roll_rng,
        ) {
            d_model.push(t)?;
        }
        if d_model.is_empty() {
            continue;
        }
        for _ in 0..cfg.offline_updates {
            let batch = d_model.sample(cfg.batch_size, &mut batch_rng)?;
            q_update(&mut q, &batch, env.discount());
        }
    }
    Ok(OfflineArtifacts {
        policy: q.greedy_policy(),
        q,
        ensemble,
        uncertainty: u,
        model_buffer: d_model,
    })
}

/// `n` draws from `buffer` under `scheme`, or `None` when the scheme has no
/// data to draw from.
fn draw<R: rand::Rng + ?Sized>(
    scheme: Scheme,
    buffer: &PriorityBuffer,
    n: usize,
    rng: &mut R,
) -> Result<Option<Vec<Transition>>> {
    let out = match scheme {
        Scheme::Prioritized => buffer.sample(n, rng)?,
        Scheme::Uniform => (0..n).map(|_| buffer.sample_uniform(rng)).collect::<Result<_>>()?,
        Scheme::HalfHalf => {
            let n_off = if buffer.num_online() == 0 { n } else { n.div_ceil(2) };
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let origin = if i < n_off { Origin::Offline } else { Origin::Online };
                out.push(buffer.sample_origin(origin, rng)?);
            }
            out
        }
        Scheme::PureOnline => {
            if buffer.num_online() == 0 {
                return Ok(None);
            }
            (0..n)
                .map(|_| buffer.sample_origin(Origin::Online, rng))
                .collect::<Result<_>>()?
        }
    };
    Ok(Some(out))
}

/// Resample size of one ensemble member under `scheme`.
fn resample_size(scheme: Scheme, buffer: &PriorityBuffer) -> usize {
    match scheme {
        Scheme::PureOnline => buffer.num_online(),
        _ => buffer.len(),
    }
}

/// Offline share that `scheme` should put into a batch of `n` draws.
fn scheme_offline_fraction(scheme: Scheme, buffer: &PriorityBuffer, n: usize) -> Result<f64> {
    let (n_off, n_on) = (buffer.num_offline(), buffer.num_online());
    Ok(match scheme {
        Scheme::Prioritized => expected_offline_fraction(n_off, n_on, buffer.epoch(), buffer.alpha())?,
        Scheme::Uniform => n_off as f64 / (n_off + n_on) as f64,
        Scheme::HalfHalf if n_on == 0 => 1.0,
        Scheme::HalfHalf => n.div_ceil(2) as f64 / n as f64,
        Scheme::PureOnline => 0.0,
    })
}

struct EpochTally {
    drawn: usize,
    drawn_offline: usize,
    expected_offline: f64,
    refits: u32,
    visits: Vec<u64>,
}

/// The online stage. Starts from the offline Q table and ensemble with an
/// empty model buffer, and runs `cfg.epochs` epochs of `cfg.steps_per_epoch`
/// environment steps on `stepper`, which is reset first.
///
/// Every `model_update_freq` steps the ensemble is refit on resamples drawn
/// from `D_off` and `D_on` under `scheme`, the uncertainty table is
/// recomputed, and rollouts from scheme-drawn states fill the model buffer.
/// Each step then applies `updates_per_step` Q updates from the model buffer,
/// once it is nonempty.
pub fn train_online(
    artifacts: &OfflineArtifacts,
    d_off: &Dataset,
    mut stepper: EnvStepper,
    cfg: &TrainConfig,
    scheme: Scheme,
) -> Result<MetricsLog> {
    cfg.validate()?;
    if d_off.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let env = stepper.mdp().clone();
    let (s_n, a_n) = (env.num_states(), env.num_actions());
    if artifacts.q.num_states() != s_n || artifacts.q.num_actions() != a_n {
        return Err(Error::DimensionMismatch(format!(
            "offline artifacts are {}x{}, environment is {s_n}x{a_n}",
            artifacts.q.num_states(),
            artifacts.q.num_actions()
        )));
    }
    let (gamma, mu0) = (env.discount(), env.initial_dist().to_vec());

    let mut buffer = PriorityBuffer::new(cfg.alpha, None)?;
    for t in &d_off.transitions {
        if t.origin != Origin::Offline {
            return Err(Error::InvalidArgument(format!(
                "offline dataset holds a transition of origin {}",
                t.origin
            )));
        }
        buffer.add(*t)?;
    }
    let mut q = artifacts.q.clone();
    q.learning_rate = cfg.learning_rate;
    let mut ensemble = artifacts.ensemble.clone();
    let mut u = artifacts.uncertainty.clone();
    let mut d_model = ModelBuffer::new(cfg.model_capacity)?;

    let mut act_rng: Rng = stream(cfg.seed, ACT);
    let mut fit_rng = stream(cfg.seed, FIT);
    let mut start_rng = stream(cfg.seed, STARTS);
    let mut roll_rng = stream(cfg.seed, ROLLOUT);
    let mut batch_rng = stream(cfg.seed, BATCH);

    let eta_off = evaluate(&artifacts.policy, &env)?;
    let eta_initial = evaluate(&q.greedy_policy(), &env)?;
    let mut rows: Vec<EpochMetrics> = Vec::with_capacity(cfg.epochs as usize);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs as usize);
    stepper.reset();

    for t in 1..=cfg.epochs {
        let started = Instant::now();
        buffer.set_epoch(t)?;
        let temperature = cfg.temperature_at(t);
        let mut tally = EpochTally {
            drawn: 0,
            drawn_offline: 0,
            expected_offline: 0.0,
            refits: 0,
            visits: vec![0; s_n * a_n],
        };
        for tau in 1..=cfg.steps_per_epoch {
            let s = stepper.state();
            let a = sample_discrete(&mut act_rng, &q.boltzmann(s, temperature));
            let outcome = stepper.step(a);
            buffer.add(outcome.transition)?;
            tally.visits[s * a_n + a] += 1;

            if tau % cfg.model_update_freq == 0 {
                let m = resample_size(scheme, &buffer);
                let mut resamples = Vec::with_capacity(cfg.ensemble_size);
                for _ in 0..cfg.ensemble_size {
                    match draw(scheme, &buffer, m, &mut fit_rng)? {
                        Some(r) => resamples.push(r),
                        None => break,
                    }
                }
                if resamples.len() == cfg.ensemble_size {
                    let n = m * cfg.ensemble_size;
                    tally.drawn += n;
                    tally.drawn_offline += resamples
                        .iter()
                        .flatten()
                        .filter(|d| d.origin == Origin::Offline)
                        .count();
                    tally.expected_offline += scheme_offline_fraction(scheme, &buffer, m)? * n as f64;
                    tally.refits += 1;
                    ensemble = EnsembleModel::from_resamples(s_n, a_n, cfg.smoothing, &resamples)?;
                    u = ensemble.uncertainty();
                }
                // without online data pure_online keeps the previous ensemble
                // and draws rollout starts from D_off
                let start_scheme = if scheme == Scheme::PureOnline && buffer.num_online() == 0 {
                    Scheme::Uniform
                } else {
                    scheme
                };
                let starts: Vec<usize> = draw(start_scheme, &buffer, cfg.rollout_batch, &mut start_rng)?
                    .unwrap_or_default()
                    .iter()
                    .map(|d| d.state)
                    .collect();
                let pi = q.boltzmann_policy(temperature);
                for d in rollout(
                    &ensemble,
                    &u,
                    &pi,
                    &starts,
                    cfg.rollout_length,
                    cfg.lambda,
                    &mut roll_rng,
                ) {
                    d_model.push(d)?;
                }
            }

            if !d_model.is_empty() {
                for _ in 0..cfg.updates_per_step {
                    let batch = d_model.sample(cfg.batch_size, &mut batch_rng)?;
                    q_update(&mut q, &batch, gamma);
                }
            }
        }

        let eta = evaluate(&q.greedy_policy(), &env)?;
        let visited: u64 = tally.visits.iter().sum();
        let mean_uncertainty = tally
            .visits
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * u.get(i / a_n, i % a_n))
            .sum::<f64>()
            / visited as f64;
        let penalized = ensemble.penalized_mdp(&u, cfg.lambda, &mu0, gamma)?;
        let (_, pi_star) = value_iteration_discounted(&penalized, METRIC_VI_TOL)?;
        let model_mdp = ensemble.mean_mdp(&mu0, gamma)?;
        let model_return = expected_return(&model_mdp, &pi_star)?;
        let policy_u = policy_uncertainty(&model_mdp, &u, &pi_star)?;
        if let Some(prev) = rows.last_mut() {
            prev.relative_uncertainty_error =
                Some((prev.policy_uncertainty - policy_u).abs() / prev.model_return.abs());
        }
        let (offline_fraction, expected_offline_fraction) = if tally.drawn == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (
                tally.drawn_offline as f64 / tally.drawn as f64,
                tally.expected_offline / tally.drawn as f64,
            )
        };
        rows.push(EpochMetrics {
            epoch: t,
            eta,
            offline_fraction,
            expected_offline_fraction,
            mean_uncertainty,
            policy_uncertainty: policy_u,
            model_return,
            relative_uncertainty_error: None,
            refits: tally.refits,
        });
        epoch_seconds.push(started.elapsed().as_secs_f64());
    }

    Ok(MetricsLog {
        env_id: d_off.env_id.clone(),
        tier: d_off.behavior,
        scheme,
        config: cfg.clone(),
        eta_off,
        eta_initial,
        rows,
        epoch_seconds,
    })
}
