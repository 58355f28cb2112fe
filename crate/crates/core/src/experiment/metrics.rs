use std::fmt::Write as _;

use crate::agent::{Scheme, TrainConfig};
use crate::envs::BehaviorTier;
use crate::error::{parse_err, Error, Result};

/// Metrics of one online epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u32,
    /// Exact return of the greedy online policy on the true MDP.
    pub eta: f64,
    /// Share of offline transitions among all model-fit draws of the epoch.
    pub offline_fraction: f64,
    /// The share the sampling scheme should produce, averaged over the
    /// epoch's refits with the same weights as the draws.
    pub expected_offline_fraction: f64,
    /// Visit-weighted mean of `u(s,a)` over the epoch's online steps, under
    /// the model in force at the end of the epoch.
    pub mean_uncertainty: f64,
    /// `U_t`: expected uncertainty along the optimal policy of the penalized model.
    pub policy_uncertainty: f64,
    /// Return of that policy on the unpenalized mean model.
    pub model_return: f64,
    /// `|U_t - U_{t+1}| / |model_return_t|`; `None` at the last epoch.
    pub relative_uncertainty_error: Option<f64>,
    pub refits: u32,
}

/// Everything recorded about one online run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub env_id: String,
    pub tier: BehaviorTier,
    pub scheme: Scheme,
    pub config: TrainConfig,
    /// Exact return of the offline policy.
    pub eta_off: f64,
    /// Exact return of the online policy before its first update.
    pub eta_initial: f64,
    pub rows: Vec<EpochMetrics>,
    /// Wall-clock seconds per epoch. Kept out of the CSV so that reruns are
    /// byte-identical; see [`MetricsLog::timing_csv`].
    pub epoch_seconds: Vec<f64>,
}

pub const METRICS_COLUMNS: &str = "epoch,eta,offline_fraction,expected_offline_fraction,mean_uncertainty,policy_uncertainty,model_return,relative_uncertainty_error,refits";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsLog {
    pub fn etas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eta).collect()
    }

    pub fn final_eta(&self) -> f64 {
        self.rows.last().map_or(self.eta_initial, |r| r.eta)
    }

    /// CSV with `#` header lines (run identity, code version, full config),
    /// then one row per epoch. Reals use the shortest exact representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# moore metrics").unwrap();
        writeln!(out, "# code_version = \"{}\"", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(out, "# env = \"{}\"", self.env_id).unwrap();
        writeln!(out, "# tier = \"{}\"", self.tier).unwrap();
        writeln!(out, "# scheme = \"{}\"", self.scheme).unwrap();
        writeln!(out, "# eta_off = {}", self.eta_off).unwrap();
        writeln!(out, "# eta_initial = {}", self.eta_initial).unwrap();
        let config = toml::to_string(&self.config).expect("config serializes");
        for line in config.lines() {
            writeln!(out, "# config.{line}").unwrap();
        }
        out.push_str(METRICS_COLUMNS);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.eta,
                r.offline_fraction,
                r.expected_offline_fraction,
                r.mean_uncertainty,
                r.policy_uncertainty,
                r.model_return,
                opt(r.relative_uncertainty_error),
                r.refits
            )
            .unwrap();
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for (i, s) in self.epoch_seconds.iter().enumerate() {
            writeln!(out, "{},{s}", i + 1).unwrap();
        }
        out
    }
}

impl MetricsLog {
    /// Inverse of [`MetricsLog::to_csv`]. Timing is not part of the CSV and
    /// comes back empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        let mut config = String::new();
        for (i, line) in text.lines().enumerate() {
            let Some(rest) = line.strip_prefix("# ") else { continue };
            if let Some(c) = rest.strip_prefix("config.") {
                config.push_str(c);
                config.push('\n');
            } else if let Some((k, v)) = rest.split_once(" = ") {
                fields.insert(k.to_string(), (i + 1, v.trim_matches('"').to_string()));
            }
        }
        let field = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| Error::Config(format!("metrics header lacks {k}")))
        };
        let parsed = |k: &str| -> Result<f64> {
            let (n, v) = field(k)?;
            v.parse().map_err(|_| parse_err(*n, format!("bad {k}")))
        };
        let config: TrainConfig = toml::from_str(&config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            env_id: field("env")?.1.clone(),
            tier: field("tier")?.1.parse()?,
            scheme: field("scheme")?.1.parse()?,
            config,
            eta_off: parsed("eta_off")?,
            eta_initial: parsed("eta_initial")?,
            rows: parse_metrics_rows(text)?,
            epoch_seconds: Vec::new(),
        })
    }
}

/// Parses the epoch rows of [`MetricsLog::to_csv`] output.
pub fn parse_metrics_rows(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header == METRICS_COLUMNS => {}
        Some((n, _)) => return Err(parse_err(n, "unexpected metrics header")),
        None => return Err(Error::EmptyDataset),
    }
    lines
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(parse_err(n, format!("expected 9 columns, found {}", f.len())));
            }
            let real = |i: usize| {
                f[i].parse::<f64>()
                    .map_err(|_| parse_err(n, format!("bad number {:?}", f[i])))
            };
            Ok(EpochMetrics {
                epoch: f[0].parse().map_err(|_| parse_err(n, "bad epoch"))?,
                eta: real(1)?,
                offline_fraction: real(2)?,
                expected_offline_fraction: real(3)?,
                mean_uncertainty: real(4)?,
                policy_uncertainty: real(5)?,
                model_return: real(6)?,
                relative_uncertainty_error: if f[7].is_empty() { None } else { Some(real(7)?) },
                refits: f[8].parse().map_err(|_| parse_err(n, "bad refit count"))?,
            })
        })
        .collect()
}
