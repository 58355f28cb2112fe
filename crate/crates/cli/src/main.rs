use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use moore_core::envs::write_dataset;
use moore_core::experiment::{
    emit_report, median, offline_dataset, prepare_seed, run_ablation_schemes, run_alpha_sweep, run_cell,
    summarize_schemes, ALPHA_GRID,
};
use moore_core::theory::{verify_all, VerifyConfig};
use moore_core::{BehaviorTier, EnvSpec, Error, MetricsLog, RunConfig, Scheme};

const EXIT_CONFIG: u8 = 1;
const EXIT_VIOLATION: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

/// Offline-to-online RL on finite MDPs: bound verification, data generation,
/// training and ablations.
#[derive(Debug, Parser)]
#[command(name = "moore", version)]
struct Cli {
    /// Output root. Defaults to the config's `out_dir`, then $MOORE_OUT_DIR, then `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the value-gap bounds and identities on random MDPs.
    Verify(VerifyArgs),
    /// Generate an offline dataset.
    GenData(GenDataArgs),
    /// Offline stage plus one online run.
    Train(TrainArgs),
    /// Paired-seed ablation over sampling schemes or alpha values.
    Ablate(AblateArgs),
    /// Rebuild summary files and plot scripts from saved metrics CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Number of seeds.
    #[arg(long, default_value_t = 1000)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Largest state count.
    #[arg(long, default_value_t = 8)]
    states: usize,
    /// Largest action count.
    #[arg(long, default_value_t = 4)]
    actions: usize,
    /// Largest horizon.
    #[arg(long, default_value_t = 10)]
    horizon: usize,
    /// Comma-separated perturbation sizes.
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.2,0.5")]
    eps_grid: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Debug, Args)]
struct EnvArgs {
    /// Environment, e.g. `gridworld-5x5` or `chain-6`.
    #[arg(long)]
    env: Option<EnvSpec>,
    /// Slip probability of the environment.
    #[arg(long)]
    slip: Option<f64>,
    /// Behavior tier of the offline data.
    #[arg(long)]
    tier: Option<BehaviorTier>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Number of transitions.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<u32>,
    /// Offline dataset size.
    #[arg(long)]
    n_offline: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "prioritized")]
    scheme: Scheme,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationKind {
    Schemes,
    Alpha,
}

#[derive(Debug, Args)]
struct AblateArgs {
    kind: AblationKind,
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated alpha values for the alpha sweep.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Alpha for the scheme ablation.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory holding a `metrics/` folder of CSVs.
    #[arg(long)]
    input: PathBuf,
}

/// Error that maps to a specific exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn out_root(cli_out: &Option<PathBuf>, cfg: Option<&RunConfig>) -> PathBuf {
    match (cli_out, cfg) {
        (Some(p), _) => p.clone(),
        (None, Some(cfg)) => cfg.out_dir(),
        (None, None) => RunConfig::default().out_dir(),
    }
}

fn apply_env(args: &EnvArgs, cfg: &mut RunConfig) {
    if let Some(env) = &args.env {
        cfg.env = env.clone();
    }
    if let Some(slip) = args.slip {
        cfg.env.slip = slip;
    }
    if let Some(tier) = args.tier {
        cfg.tier = tier;
    }
}

fn load_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    apply_env(&args.env, &mut cfg);
    if let Some(l) = args.lambda {
        cfg.train.lambda = l;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(n) = args.n_offline {
        cfg.n_offline = n;
    }
    Ok(cfg)
}

fn verify(args: &VerifyArgs, out: &Path) -> anyhow::Result<()> {
    let cfg = VerifyConfig {
        first_seed: args.first_seed,
        seeds: args.seeds,
        max_states: args.states,
        max_actions: args.actions,
        max_horizon: args.horizon,
        eps_grid: args.eps_grid.clone(),
        lambda: args.lambda,
        ..VerifyConfig::default()
    };
    let summary = verify_all(&cfg)?;
    print!("{}", summary.render());
    fs::create_dir_all(out)?;
    let path = out.join("verify.csv");
    fs::write(&path, summary.to_csv())?;
    println!("reports written to {}", path.display());
    let n = summary.violations().len();
    if n > 0 {
        return Err(Exit(EXIT_VIOLATION, format!("{n} bound violations")).into());
    }
    Ok(())
}

fn gen_data(args: &GenDataArgs, out: &Path) -> anyhow::Result<()> {
    let mut cfg = RunConfig {
        n_offline: args.n,
        ..RunConfig::default()
    };
    apply_env(&args.env, &mut cfg);
    cfg.env.validate().map_err(|e| Error::Config(e.to_string()))?;
    // same dataset that `train` and `ablate` build for this seed
    let (env, data) = offline_dataset(&cfg, args.seed)?;
    let dir = out.join("data");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}_{}_seed{}.txt", cfg.env.env_id(), cfg.tier, args.seed));
    fs::write(&path, write_dataset(&data))?;
    match data.mean_episode_return(env.discount()) {
        Some(g) => println!("{} transitions, mean episode return {g:.4}", data.len()),
        None => println!("{} transitions, no complete episode", data.len()),
    }
    println!("dataset written to {}", path.display());
    Ok(())
}

fn train(args: &TrainArgs, cli_out: &Option<PathBuf>) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.run)?;
    cfg.seeds = vec![args.seed];
    if let Some(a) = args.alpha {
        cfg.train.alpha = a;
    }
    cfg.validate()?;
    let setup = prepare_seed(&cfg, args.seed)?;
    let log = run_cell(&cfg, &setup, args.scheme, cfg.train.alpha)?;
    println!(
        "{} {} {} seed {}: eta_off {:.4}, final eta {:.4}",
        log.env_id,
        log.tier,
        log.scheme,
        args.seed,
        log.eta_off,
        log.final_eta()
    );
    let dir = out_root(cli_out, Some(&cfg)).join("train");
    emit_report(std::slice::from_ref(&log), &dir)?;
    println!("report written to {}", dir.display());
    Ok(())
}

fn print_summary(logs: &[MetricsLog]) -> anyhow::Result<()> {
    println!(
        "{:<24}{:>6}{:>10}{:>10}{:>10}{:>10}",
        "series", "runs", "eta_off", "dip", "epochs", "final"
    );
    for s in summarize_schemes(logs)? {
        println!(
            "{:<24}{:>6}{:>10.4}{:>10.4}{:>10}{:>10.4}",
            s.label, s.runs, s.median_eta_off, s.median_dip, s.median_epochs_to_threshold, s.median_final_eta
        );
    }
    Ok(())
}

/// Qualitative checks on a scheme ablation. Returns one line per check.
fn check_schemes(logs: &[MetricsLog]) -> anyhow::Result<Vec<(bool, String)>> {
    let mut out = Vec::new();
    let summary = summarize_schemes(logs)?;
    let find = |s: Scheme| summary.iter().find(|x| x.scheme == s);
    if let (Some(p), Some(o)) = (find(Scheme::Prioritized), find(Scheme::PureOnline)) {
        out.push((
            p.median_dip <= o.median_dip,
            format!(
                "median dip prioritized {:.4} <= pure_online {:.4}",
                p.median_dip, o.median_dip
            ),
        ));
    }
    let worst = logs
        .iter()
        .filter(|l| l.scheme == Scheme::Prioritized)
        .flat_map(|l| &l.rows)
        .map(|r| (r.offline_fraction - r.expected_offline_fraction).abs())
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    if let Some(w) = worst {
        out.push((
            w <= 0.05,
            format!("offline fraction within 0.05 of expected (worst {w:.4})"),
        ));
    }
    Ok(out)
}

fn check_alpha_sweep(logs: &[MetricsLog], alphas: &[f64]) -> Vec<(bool, String)> {
    if alphas != ALPHA_GRID {
        return Vec::new();
    }
    let finals: Vec<f64> = alphas[1..6]
        .iter()
        .map(|&a| {
            let v: Vec<f64> = logs
                .iter()
                .filter(|l| l.config.alpha == a)
                .map(|l| l.final_eta())
                .collect();
            median(&v)
        })
        .collect();
    let hi = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = finals.iter().cloned().fold(f64::INFINITY, f64::min);
    vec![(
        hi - lo <= 0.2 * hi.abs(),
        format!("median final returns for alpha 0.25..4 within 20% ({lo:.4} to {hi:.4})"),
    )]
}

fn ablate(args: &AblateArgs, cli_out: &Option<PathBuf>) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.run)?;
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(alphas) = &args.alphas {
        cfg.alphas = alphas.clone();
    }
    if let Some(a) = args.alpha {
        cfg.train.alpha = a;
    }
    cfg.validate()?;
    if cfg.seeds.len() < 3 {
        eprintln!("warning: paired comparisons are weak with fewer than 3 seeds");
    }
    let (logs, checks, name) = match args.kind {
        AblationKind::Schemes => {
            let logs = run_ablation_schemes(&cfg)?;
            let checks = check_schemes(&logs)?;
            (logs, checks, "ablate_schemes")
        }
        AblationKind::Alpha => {
            let logs = run_alpha_sweep(&cfg, &cfg.alphas)?;
            let checks = check_alpha_sweep(&logs, &cfg.alphas);
            (logs, checks, "ablate_alpha")
        }
    };
    print_summary(&logs)?;
    let dir = out_root(cli_out, Some(&cfg)).join(name);
    emit_report(&logs, &dir)?;
    println!("report written to {}", dir.display());
    let mut failed = 0;
    for (ok, line) in &checks {
        println!("{} {line}", if *ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        return Err(Exit(EXIT_ACCEPTANCE, format!("{failed} ablation checks failed")).into());
    }
    Ok(())
}

fn report(args: &ReportArgs, cli_out: &Option<PathBuf>) -> anyhow::Result<()> {
    let dir = args.input.join("metrics");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    paths.sort();
    if paths.is_empty() {
        bail!(Exit(EXIT_CONFIG, format!("no metrics CSVs in {}", dir.display())));
    }
    let logs = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            MetricsLog::from_csv(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    print_summary(&logs)?;
    let out = cli_out.clone().unwrap_or_else(|| args.input.clone());
    emit_report(&logs, &out)?;
    println!("report written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Verify(a) => verify(a, &out_root(&cli.out, None)),
        Command::GenData(a) => gen_data(a, &out_root(&cli.out, None)),
        Command::Train(a) => train(a, &cli.out),
        Command::Ablate(a) => ablate(a, &cli.out),
        Command::Report(a) => report(a, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Exit>().map_or(EXIT_CONFIG, |x| x.0);
            ExitCode::from(code)
        }
    }
}
