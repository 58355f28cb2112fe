//! Ensemble and agent behaviour against exact references on small gridworlds.

use moore_core::agent::{evaluate, q_update, rollout, train_offline};
use moore_core::envs::{build_env, generate_offline_dataset, make_behavior_policy};
use moore_core::mdp::{occupancy_measure, value_iteration_discounted};
use moore_core::model::fit_ensemble;
use moore_core::rng::stream;
use moore_core::{BehaviorTier, Dataset, EnsembleModel, EnvSpec, FiniteMdp, Policy, QTable, TrainConfig, Transition};
use statrs::distribution::{Binomial, DiscreteCDF};

fn dataset(spec: &EnvSpec, tier: BehaviorTier, n: usize, seed: u64) -> (FiniteMdp, Dataset) {
    let (env, mut stepper) = build_env(spec, seed).unwrap();
    let behavior = make_behavior_policy(&env, tier, seed).unwrap();
    let data = generate_offline_dataset(&mut stepper, &spec.env_id(), &behavior, n, seed).unwrap();
    (env, data)
}

fn fit(env: &FiniteMdp, data: &[Transition], seed: u64) -> EnsembleModel {
    fit_ensemble(
        data,
        &vec![1.0; data.len()],
        env.num_states(),
        env.num_actions(),
        5,
        0.1,
        seed,
    )
    .unwrap()
}

fn argmax(row: &[f64]) -> usize {
    (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap()
}

/// Ensemble whose members are all fit on the same data, with negligible smoothing.
fn point_model(env: &FiniteMdp, data: &Dataset) -> EnsembleModel {
    let copies = vec![data.transitions.clone(); 5];
    EnsembleModel::from_resamples(env.num_states(), env.num_actions(), 1e-12, &copies).unwrap()
}

#[test]
fn modal_next_state_is_recovered_on_deterministic_grid() {
    let (env, data) = dataset(&EnvSpec::gridworld(4, 0.0), BehaviorTier::Random, 20_000, 1);
    let model = fit(&env, &data.transitions, 2);
    let mean = model.mean_rows();
    let s_n = env.num_states();
    let mut checked = 0;
    for s in (0..s_n).filter(|&s| !env.is_terminal(s)) {
        for a in 0..env.num_actions() {
            if model.visit_count(s, a) < 50 {
                continue;
            }
            let sa = s * env.num_actions() + a;
            assert_eq!(argmax(&mean[sa * s_n..(sa + 1) * s_n]), argmax(env.row(s, a)));
            checked += 1;
        }
    }
    assert!(checked >= 40, "only {checked} well-visited pairs");
}

#[test]
fn visited_pairs_are_less_uncertain_than_unvisited() {
    let (env, data) = dataset(&EnvSpec::gridworld(5, 0.1), BehaviorTier::Expert, 2000, 3);
    let model = fit(&env, &data.transitions, 4);
    let u = model.uncertainty();
    let (mut heavy, mut never) = (Vec::new(), Vec::new());
    for s in (0..env.num_states()).filter(|&s| !env.is_terminal(s)) {
        for a in 0..env.num_actions() {
            match model.visit_count(s, a) {
                0 => never.push(u.get(s, a)),
                n if n >= 100 => heavy.push(u.get(s, a)),
                _ => {}
            }
        }
    }
    assert!(!heavy.is_empty() && !never.is_empty());
    let worst_heavy = heavy.iter().cloned().fold(0.0, f64::max);
    let least_never = never.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(worst_heavy < least_never, "{worst_heavy} vs {least_never}");
}

#[test]
fn sample_step_follows_the_mean_row() {
    let (env, data) = dataset(&EnvSpec::gridworld(4, 0.2), BehaviorTier::Medium, 1000, 5);
    let model = fit(&env, &data.transitions, 6);
    let mean = model.mean_rows();
    let s_n = env.num_states();
    let mut rng = stream(7, 7);
    for (s, a) in [(0, 1), (5, 2), (9, 0)] {
        let mut counts = vec![0.0; s_n];
        let draws = 100_000;
        for _ in 0..draws {
            counts[model.sample_step(s, a, &mut rng).0] += 1.0 / draws as f64;
        }
        let sa = s * env.num_actions() + a;
        let l1: f64 = counts.iter().zip(&mean[sa * s_n..]).map(|(c, p)| (c - p).abs()).sum();
        assert!(l1 <= 0.02, "pair ({s}, {a}): l1 {l1}");
    }
}

#[test]
fn deterministic_model_rollout_reproduces_true_trajectory() {
    let (env, data) = dataset(&EnvSpec::gridworld(4, 0.0), BehaviorTier::Random, 20_000, 8);
    let model = point_model(&env, &data);
    let u = model.uncertainty();
    let pi = Policy::Deterministic((0..env.num_states()).map(|s| (s * 7 + 1) % 4).collect());
    let mut rng = stream(9, 9);
    for start in [0, 3, 6, 12] {
        let got = rollout(&model, &u, &pi, &[start], 10, 1.0, &mut rng);
        let mut s = start;
        let mut expected = Vec::new();
        for _ in 0..10 {
            if env.is_terminal(s) {
                break;
            }
            let a = (s * 7 + 1) % 4;
            let next = argmax(env.row(s, a));
            expected.push((s, a, env.reward(s, a), next));
            s = next;
        }
        assert_eq!(got.len(), expected.len(), "start {start}");
        for (t, &(s, a, r, next)) in got.iter().zip(&expected) {
            assert_eq!((t.state, t.action, t.next_state), (s, a, next), "start {start}");
            // member rewards are sample means of the same constant
            assert!((t.reward - r).abs() < 1e-12);
        }
    }
}

#[test]
fn penalty_weight_shifts_rewards_only() {
    let (env, data) = dataset(&EnvSpec::gridworld(5, 0.1), BehaviorTier::Medium, 1000, 10);
    let model = fit(&env, &data.transitions, 11);
    let u = model.uncertainty();
    let pi = Policy::uniform(env.num_states(), env.num_actions());
    let starts: Vec<usize> = data.transitions.iter().take(200).map(|t| t.state).collect();
    let plain = rollout(&model, &u, &pi, &starts, 5, 0.0, &mut stream(12, 12));
    let penalized = rollout(&model, &u, &pi, &starts, 5, 1.0, &mut stream(12, 12));
    assert_eq!(plain.len(), penalized.len());
    for (x, y) in plain.iter().zip(&penalized) {
        assert_eq!(
            (x.state, x.action, x.next_state, x.done),
            (y.state, y.action, y.next_state, y.done)
        );
        assert!((x.reward - y.reward - u.get(x.state, x.action)).abs() < 1e-12);
    }
}

#[test]
fn q_learning_on_fixed_model_batch_converges_to_model_optimum() {
    let (env, data) = dataset(&EnvSpec::gridworld(4, 0.0), BehaviorTier::Random, 20_000, 13);
    let model = point_model(&env, &data);
    let u = model.uncertainty();
    let lambda = 0.5;
    let (s_n, a_n) = (env.num_states(), env.num_actions());
    let mut rng = stream(14, 14);
    // one model transition per pair, reused for every sweep
    let mut batch = Vec::new();
    for s in (0..s_n).filter(|&s| !model.is_terminal(s)) {
        for a in 0..a_n {
            let one = Policy::Deterministic(vec![a; s_n]);
            batch.extend(rollout(&model, &u, &one, &[s], 1, lambda, &mut rng));
        }
    }
    assert_eq!(batch.len(), (s_n - 1) * a_n);
    let mut q = QTable::new(s_n, a_n, 0.5);
    for _ in 0..2000 {
        q_update(&mut q, &batch, env.discount());
    }
    let m = model
        .penalized_mdp(&u, lambda, env.initial_dist(), env.discount())
        .unwrap();
    let (v, _) = value_iteration_discounted(&m, 1e-12).unwrap();
    for s in 0..s_n {
        for a in 0..a_n {
            let q_star = if m.is_terminal(s) {
                0.0
            } else {
                m.backup(s, a, v.initial())
            };
            assert!(
                (q.get(s, a) - q_star).abs() < 1e-3,
                "({s}, {a}): {} vs {q_star}",
                q.get(s, a)
            );
        }
    }
}

#[test]
fn expert_data_without_penalty_recovers_near_optimal_policy() {
    let spec = EnvSpec::gridworld(5, 0.1);
    let (env, data) = dataset(&spec, BehaviorTier::Expert, 2000, 15);
    let cfg = TrainConfig {
        lambda: 0.0,
        seed: 15,
        ..TrainConfig::default()
    };
    let art = train_offline(&data, &env, &cfg).unwrap();
    let (v, _) = value_iteration_discounted(&env, 1e-10).unwrap();
    let eta_star: f64 = v.initial().iter().zip(env.initial_dist()).map(|(v, p)| v * p).sum();
    let eta = evaluate(&art.policy, &env).unwrap();
    assert!(
        (eta_star - eta).abs() <= 0.15 * eta_star.abs(),
        "{eta} vs optimum {eta_star}"
    );
}

#[test]
fn expert_data_with_default_penalty_recovers_near_optimal_policy() {
    let spec = EnvSpec::gridworld(5, 0.1);
    let (env, data) = dataset(&spec, BehaviorTier::Expert, 2000, 15);
    let cfg = TrainConfig {
        seed: 15,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.lambda, 1.0);
    let art = train_offline(&data, &env, &cfg).unwrap();
    let (v, _) = value_iteration_discounted(&env, 1e-10).unwrap();
    let eta_star: f64 = v.initial().iter().zip(env.initial_dist()).map(|(v, p)| v * p).sum();
    let eta = evaluate(&art.policy, &env).unwrap();
    assert!(
        (eta_star - eta).abs() <= 0.15 * eta_star.abs(),
        "{eta} vs optimum {eta_star}"
    );
}

fn mean_visits(env: &FiniteMdp, model: &EnsembleModel, pi: &Policy) -> f64 {
    let rho = occupancy_measure(env, pi).unwrap();
    let mut num = 0.0;
    for s in 0..env.num_states() {
        for a in 0..env.num_actions() {
            num += rho.get(s, a) * model.visit_count(s, a) as f64;
        }
    }
    num / rho.total_mass()
}

#[test]
fn heavy_penalty_keeps_policy_near_data() {
    let spec = EnvSpec::gridworld(5, 0.1);
    let (env, data) = dataset(&spec, BehaviorTier::Medium, 2000, 16);
    let cfg = TrainConfig {
        lambda: 100.0,
        seed: 16,
        ..TrainConfig::default()
    };
    let art = train_offline(&data, &env, &cfg).unwrap();
    let uniform = Policy::uniform(env.num_states(), env.num_actions());
    let off = mean_visits(&env, &art.ensemble, &art.policy);
    let base = mean_visits(&env, &art.ensemble, &uniform);
    assert!(off > base, "{off} vs uniform {base}");
}

#[test]
fn duplicating_a_pair_does_not_raise_its_uncertainty() {
    let spec = EnvSpec::gridworld(5, 0.2);
    let (mut decreased, mut increased) = (0u64, 0u64);
    for seed in 0..100 {
        let (env, data) = dataset(&spec, BehaviorTier::Medium, 300, seed);
        let first = data.transitions[0];
        let mut doubled = data.transitions.clone();
        doubled.extend(
            data.transitions
                .iter()
                .filter(|t| (t.state, t.action) == (first.state, first.action))
                .copied(),
        );
        let before = fit(&env, &data.transitions, seed)
            .uncertainty()
            .get(first.state, first.action);
        let after = fit(&env, &doubled, seed).uncertainty().get(first.state, first.action);
        if after < before {
            decreased += 1;
        } else if after > before {
            increased += 1;
        }
    }
    // one-sided sign test against "no effect"
    let n = decreased + increased;
    let p = Binomial::new(0.5, n).unwrap().sf(decreased.saturating_sub(1));
    assert!(p < 0.05, "{decreased} decreases, {increased} increases, p = {p}");
}
