use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{compute_transfer_metrics, median, threshold_of, MetricsLog};
use crate::agent::Scheme;
use crate::error::{Error, Result};

/// Fraction of the best final return that counts as adapted.
pub const ADAPTED_FRACTION: f64 = 0.95;

/// Per-series medians over seeds. A series is one scheme, or one
/// (scheme, alpha) pair when the logs hold several alphas for a scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSummary {
    pub label: String,
    pub scheme: Scheme,
    pub alpha: f64,
    pub runs: usize,
    pub median_eta_off: f64,
    pub median_dip: f64,
    pub median_epochs_to_recover: f64,
    /// Epochs to reach 95% of the best final return of any series on the same seed.
    pub median_epochs_to_threshold: f64,
    pub median_final_eta: f64,
}

fn series_labels(logs: &[MetricsLog]) -> Vec<String> {
    let mut alphas: BTreeMap<Scheme, Vec<u64>> = BTreeMap::new();
    for l in logs {
        let v = alphas.entry(l.scheme).or_default();
        if !v.contains(&l.config.alpha.to_bits()) {
            v.push(l.config.alpha.to_bits());
        }
    }
    logs.iter()
        .map(|l| {
            if alphas[&l.scheme].len() > 1 {
                format!("{}_alpha{}", l.scheme, l.config.alpha)
            } else {
                l.scheme.to_string()
            }
        })
        .collect()
}

/// Series in order of first appearance, each with the indices of its logs.
fn group(logs: &[MetricsLog]) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, label) in series_labels(logs).into_iter().enumerate() {
        match out.iter_mut().find(|(l, _)| *l == label) {
            Some((_, idx)) => idx.push(i),
            None => out.push((label, vec![i])),
        }
    }
    out
}

pub fn summarize_schemes(logs: &[MetricsLog]) -> Result<Vec<SchemeSummary>> {
    if logs.is_empty() {
        return Err(Error::InvalidArgument("no metrics logs to summarize".into()));
    }
    let mut best: BTreeMap<u64, f64> = BTreeMap::new();
    for l in logs {
        let b = best.entry(l.config.seed).or_insert(f64::NEG_INFINITY);
        *b = b.max(l.final_eta());
    }
    group(logs)
        .into_iter()
        .map(|(label, idx)| {
            let mut dips = Vec::new();
            let mut recover = Vec::new();
            let mut threshold = Vec::new();
            for &i in &idx {
                let l = &logs[i];
                let m = compute_transfer_metrics(
                    &l.etas(),
                    l.eta_off,
                    threshold_of(best[&l.config.seed], ADAPTED_FRACTION),
                )?;
                dips.push(m.dip);
                recover.push(m.epochs_to_recover as f64);
                threshold.push(m.epochs_to_threshold as f64);
            }
            let pick = |f: &dyn Fn(&MetricsLog) -> f64| median(&idx.iter().map(|&i| f(&logs[i])).collect::<Vec<_>>());
            let first = &logs[idx[0]];
            Ok(SchemeSummary {
                label,
                scheme: first.scheme,
                alpha: first.config.alpha,
                runs: idx.len(),
                median_eta_off: pick(&|l| l.eta_off),
                median_dip: median(&dips),
                median_epochs_to_recover: median(&recover),
                median_epochs_to_threshold: median(&threshold),
                median_final_eta: pick(&|l| l.final_eta()),
            })
        })
        .collect()
}

fn comparison_csv(logs: &[MetricsLog]) -> String {
    let groups = group(logs);
    let epochs = logs.iter().map(|l| l.rows.len()).max().unwrap_or(0);
    let mut out = String::from("epoch");
    for (label, _) in &groups {
        write!(out, ",{label}").unwrap();
    }
    out.push('\n');
    for e in 0..epochs {
        write!(out, "{}", e + 1).unwrap();
        for (_, idx) in &groups {
            let etas: Vec<f64> = idx.iter().filter_map(|&i| logs[i].rows.get(e).map(|r| r.eta)).collect();
            write!(out, ",{}", median(&etas)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn summary_csv(summary: &[SchemeSummary]) -> String {
    let mut out = String::from(
        "series,scheme,alpha,runs,median_eta_off,median_dip,median_epochs_to_recover,median_epochs_to_threshold,median_final_eta\n",
    );
    for s in summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.label,
            s.scheme,
            s.alpha,
            s.runs,
            s.median_eta_off,
            s.median_dip,
            s.median_epochs_to_recover,
            s.median_epochs_to_threshold,
            s.median_final_eta
        )
        .unwrap();
    }
    out
}

const PLOT_CURVES: &str = r##"import csv
import matplotlib.pyplot as plt

with open("comparison.csv") as f:
    rows = list(csv.reader(f))
header, data = rows[0], rows[1:]
epochs = [int(r[0]) for r in data]
for j, name in enumerate(header[1:], start=1):
    plt.plot(epochs, [float(r[j]) for r in data], label=name)
plt.xlabel("online epoch")
plt.ylabel("median exact return")
plt.legend()
plt.savefig("learning_curves.png", dpi=150)
"##;

const PLOT_UNCERTAINTY: &str = r##"import csv
import glob
import matplotlib.pyplot as plt

for path in sorted(glob.glob("metrics/*.csv")):
    with open(path) as f:
        rows = [r for r in csv.DictReader(line for line in f if not line.startswith("#"))]
    plt.plot([int(r["epoch"]) for r in rows], [float(r["mean_uncertainty"]) for r in rows],
             label=path.split("/")[-1][:-4], alpha=0.7)
plt.xlabel("online epoch")
plt.ylabel("mean uncertainty over visited pairs")
plt.yscale("log")
plt.legend(fontsize=6)
plt.savefig("uncertainty_decay.png", dpi=150)
"##;

const PLOT_RUE: &str = r##"import csv
import glob
import matplotlib.pyplot as plt

values = []
for path in sorted(glob.glob("metrics/*.csv")):
    with open(path) as f:
        rows = [r for r in csv.DictReader(line for line in f if not line.startswith("#"))]
    values += [float(r["relative_uncertainty_error"]) for r in rows if r["relative_uncertainty_error"]]
plt.hist(values, bins=40)
plt.axvline(0.2, color="k", linestyle="--")
plt.xlabel("relative uncertainty error")
plt.ylabel("count")
plt.savefig("relative_uncertainty_error.png", dpi=150)
"##;

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text)?;
    written.push(path);
    Ok(())
}

/// Writes one metrics CSV (plus a timing sidecar) per log, a comparison CSV
/// with the median return curve of every series, a summary CSV, and plotting
/// scripts that read those files from their own directory. Returns the
/// written paths in a fixed order.
pub fn emit_report(logs: &[MetricsLog], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let summary = summarize_schemes(logs)?;
    fs::create_dir_all(out_dir.join("metrics"))?;
    fs::create_dir_all(out_dir.join("timing"))?;
    let mut written = Vec::new();
    for (log, label) in logs.iter().zip(series_labels(logs)) {
        let name = format!("{}_{}_{label}_seed{}.csv", log.env_id, log.tier, log.config.seed);
        write(out_dir.join("metrics").join(&name), &log.to_csv(), &mut written)?;
        if !log.epoch_seconds.is_empty() {
            write(out_dir.join("timing").join(&name), &log.timing_csv(), &mut written)?;
        }
    }
    write(out_dir.join("comparison.csv"), &comparison_csv(logs), &mut written)?;
    write(out_dir.join("summary.csv"), &summary_csv(&summary), &mut written)?;
    write(out_dir.join("plot_learning_curves.py"), PLOT_CURVES, &mut written)?;
    write(out_dir.join("plot_uncertainty.py"), PLOT_UNCERTAINTY, &mut written)?;
    write(
        out_dir.join("plot_relative_uncertainty_error.py"),
        PLOT_RUE,
        &mut written,
    )?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::TrainConfig;
    use crate::envs::BehaviorTier;
    use crate::experiment::EpochMetrics;

    fn log(scheme: Scheme, seed: u64, alpha: f64, etas: &[f64]) -> MetricsLog {
        MetricsLog {
            env_id: "gridworld-5x5".into(),
            tier: BehaviorTier::Medium,
            scheme,
            config: TrainConfig {
                seed,
                alpha,
                ..TrainConfig::default()
            },
            eta_off: 1.0,
            eta_initial: 1.0,
            rows: etas
                .iter()
                .enumerate()
                .map(|(i, &eta)| EpochMetrics {
                    epoch: i as u32 + 1,
                    eta,
                    offline_fraction: 0.5,
                    expected_offline_fraction: 0.5,
                    mean_uncertainty: 0.1,
                    policy_uncertainty: 1.0,
                    model_return: 1.0,
                    relative_uncertainty_error: (i + 1 < etas.len()).then_some(0.0),
                    refits: 4,
                })
                .collect(),
            epoch_seconds: vec![0.01; etas.len()],
        }
    }

    fn four() -> Vec<MetricsLog> {
        Scheme::ALL
            .iter()
            .enumerate()
            .map(|(i, &s)| log(s, 0, 1.0, &[1.0, 0.5 + i as f64, 2.0]))
            .collect()
    }

    #[test]
    fn four_schemes_give_four_series() {
        let csv = comparison_csv(&four());
        assert_eq!(
            csv.lines().next().unwrap(),
            "epoch,prioritized,uniform,half_half,pure_online"
        );
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn alphas_split_series() {
        let logs = vec![
            log(Scheme::Prioritized, 0, 0.5, &[1.0]),
            log(Scheme::Prioritized, 0, 2.0, &[1.0]),
        ];
        assert_eq!(series_labels(&logs), vec!["prioritized_alpha0.5", "prioritized_alpha2"]);
    }

    #[test]
    fn summary_uses_best_final_per_seed() {
        let s = summarize_schemes(&four()).unwrap();
        // best final is 2.0, threshold 1.9
        assert_eq!(s[0].median_dip, 0.5);
        assert_eq!(s[0].median_epochs_to_threshold, 3.0);
        assert_eq!(s[3].median_epochs_to_threshold, 2.0);
    }

    #[test]
    fn report_is_deterministic_and_rejects_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&[], dir.path()).is_err());
        let a = emit_report(&four(), &dir.path().join("a")).unwrap();
        let b = emit_report(&four(), &dir.path().join("b")).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        assert!(a.iter().any(|p| p.ends_with("plot_learning_curves.py")));
    }
}
