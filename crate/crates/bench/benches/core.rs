use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use std::hint::black_box;

use moore_bench::{gridworld_data, mdp, priority_buffer, verify_config};
use moore_core::mdp::{policy_evaluation, value_iteration_discounted};
use moore_core::model::fit_ensemble;
use moore_core::rng::stream;
use moore_core::theory::verify_all;

fn replay(c: &mut Criterion) {
    let mut group = c.benchmark_group("replay");
    for n in [2_000, 20_000] {
        let buffer = priority_buffer(n, n / 4);
        group.bench_with_input(BenchmarkId::new("sample_256", n), &buffer, |b, buf| {
            let mut rng = stream(0, 1);
            b.iter(|| buf.sample(256, &mut rng).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("set_epoch", n), &buffer, |b, buf| {
            b.iter_batched(
                || buf.clone(),
                |mut buf| {
                    buf.set_epoch(3).unwrap();
                    buf
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    for s in [25, 100] {
        let m = mdp(s, 4, 7);
        group.bench_with_input(BenchmarkId::new("value_iteration", s), &m, |b, m| {
            b.iter(|| value_iteration_discounted(black_box(m), 1e-10).unwrap())
        });
        let (_, pi) = value_iteration_discounted(&m, 1e-10).unwrap();
        group.bench_with_input(BenchmarkId::new("policy_evaluation", s), &m, |b, m| {
            b.iter(|| policy_evaluation(black_box(m), &pi).unwrap())
        });
    }
    group.finish();
}

fn ensemble(c: &mut Criterion) {
    let (env, data) = gridworld_data(5_000, 0);
    let weights = vec![1.0; data.len()];
    c.bench_function("fit_ensemble_5k", |b| {
        b.iter(|| {
            let model = fit_ensemble(
                &data.transitions,
                &weights,
                env.num_states(),
                env.num_actions(),
                5,
                0.1,
                3,
            )
            .unwrap();
            model.uncertainty()
        })
    });
}

fn verification(c: &mut Criterion) {
    let cfg = verify_config(20);
    c.bench_function("verify_20_seeds", |b| b.iter(|| verify_all(black_box(&cfg)).unwrap()));
}

criterion_group!(benches, replay, solvers, ensemble, verification);
criterion_main!(benches);
