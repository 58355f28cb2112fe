//! Orchestration: pairing, alpha handling, sweeps and report files.

use std::fs;

use moore_core::experiment::{
    emit_report, median, prepare_seed, run_ablation_schemes, run_alpha_sweep, run_cell, EpochMetrics, ALPHA_GRID,
};
use moore_core::{MetricsLog, RunConfig, Scheme, TrainConfig};

fn short(epochs: u32, seeds: Vec<u64>) -> RunConfig {
    RunConfig {
        seeds,
        train: TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

/// CSV text minus the `# config.alpha` header line.
fn without_alpha(log: &MetricsLog) -> String {
    log.to_csv()
        .lines()
        .filter(|l| !l.starts_with("# config.alpha"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn mean_u(rows: &[EpochMetrics]) -> f64 {
    rows.iter().map(|r| r.mean_uncertainty).sum::<f64>() / rows.len() as f64
}

#[test]
fn one_seed_two_epochs_gives_four_short_logs() {
    let logs = run_ablation_schemes(&short(2, vec![0])).unwrap();
    assert_eq!(logs.len(), 4);
    let schemes: Vec<Scheme> = logs.iter().map(|l| l.scheme).collect();
    assert_eq!(schemes, Scheme::ALL.to_vec());
    for l in &logs {
        assert_eq!(l.rows.len(), 2);
        // paired: same offline stage for every scheme
        assert_eq!(l.eta_off, logs[0].eta_off);
    }
}

#[test]
fn alpha_only_reaches_the_prioritized_scheme() {
    let cfg = short(4, vec![3]);
    let setup = prepare_seed(&cfg, 3).unwrap();
    for scheme in [Scheme::Uniform, Scheme::HalfHalf, Scheme::PureOnline] {
        let a = run_cell(&cfg, &setup, scheme, 0.5).unwrap();
        let b = run_cell(&cfg, &setup, scheme, 4.0).unwrap();
        assert_eq!(without_alpha(&a), without_alpha(&b), "{scheme}");
        assert_ne!(a.to_csv(), b.to_csv());
    }
    let a = run_cell(&cfg, &setup, Scheme::Prioritized, 0.5).unwrap();
    let b = run_cell(&cfg, &setup, Scheme::Prioritized, 4.0).unwrap();
    assert_eq!((a.eta_off, a.eta_initial), (b.eta_off, b.eta_initial));
    assert_ne!(a.rows, b.rows);
    // lower alpha keeps more weight on offline data
    assert!(a.rows[0].expected_offline_fraction > b.rows[0].expected_offline_fraction);
}

#[test]
fn pure_online_fits_on_online_data_only() {
    let cfg = short(3, vec![5]);
    let setup = prepare_seed(&cfg, 5).unwrap();
    let log = run_cell(&cfg, &setup, Scheme::PureOnline, 1.0).unwrap();
    for r in &log.rows {
        assert_eq!(r.offline_fraction, 0.0);
        assert_eq!(
            r.refits as usize,
            cfg.train.steps_per_epoch / cfg.train.model_update_freq
        );
    }
}

#[test]
fn single_alpha_sweep_is_a_plain_run() {
    let cfg = short(3, vec![1, 2]);
    let swept = run_alpha_sweep(&cfg, &[2.0]).unwrap();
    assert_eq!(swept.len(), 2);
    for (log, seed) in swept.iter().zip([1, 2]) {
        let setup = prepare_seed(&cfg, seed).unwrap();
        let direct = run_cell(&cfg, &setup, Scheme::Prioritized, 2.0).unwrap();
        assert_eq!(log.to_csv(), direct.to_csv());
    }
    assert!(run_alpha_sweep(&cfg, &[]).is_err());
    assert!(run_alpha_sweep(&cfg, &[1.0, 0.0]).is_err());
}

#[test]
fn middle_of_alpha_grid_is_robust() {
    let cfg = RunConfig::default();
    let logs = run_alpha_sweep(&cfg, &ALPHA_GRID).unwrap();
    let finals: Vec<f64> = ALPHA_GRID
        .iter()
        .map(|&a| {
            let v: Vec<f64> = logs
                .iter()
                .filter(|l| l.config.alpha == a)
                .map(|l| l.final_eta())
                .collect();
            assert_eq!(v.len(), cfg.seeds.len());
            median(&v)
        })
        .collect();
    let middle = &finals[1..6];
    let hi = middle.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = middle.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(hi - lo <= 0.2 * hi.abs(), "median final returns {finals:?}");

    // uncertainty does not grow from the first to the last third (alpha = 1)
    let ratios: Vec<f64> = logs
        .iter()
        .filter(|l| l.config.alpha == 1.0)
        .map(|l| {
            let third = l.rows.len() / 3;
            mean_u(&l.rows[l.rows.len() - third..]) / mean_u(&l.rows[..third])
        })
        .collect();
    assert!(median(&ratios) <= 1.0, "{ratios:?}");
}

#[test]
fn report_files_parse_back() {
    let logs = run_ablation_schemes(&short(2, vec![0, 1, 2])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&logs, dir.path()).unwrap();
    let comparison = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert_eq!(
        comparison.lines().next().unwrap(),
        "epoch,prioritized,uniform,half_half,pure_online"
    );
    assert_eq!(comparison.lines().count(), 3);
    let metrics: Vec<_> = written
        .iter()
        .filter(|p| p.parent().unwrap().ends_with("metrics"))
        .collect();
    assert_eq!(metrics.len(), logs.len());
    for (path, log) in metrics.iter().zip(&logs) {
        let back = MetricsLog::from_csv(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back.rows, log.rows);
        assert_eq!(back.config, log.config);
    }
    let again = tempfile::tempdir().unwrap();
    for (a, b) in written.iter().zip(emit_report(&logs, again.path()).unwrap()) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }
}
