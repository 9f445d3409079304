use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use npf_cli::experiment::{obs_dim, read_observations};
use npf_cli::{run_kalman_check, run_npf, run_simulate, run_sweep, threads_from_env, ExperimentConfig};

#[derive(Parser)]
#[command(name = "npf", version, about = "Nested particle filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground truth and observations.
    Simulate(Common),
    /// Run the nested filter.
    Run {
        #[command(flatten)]
        common: Common,
        /// Use the no-jitter kernel.
        #[arg(long)]
        no_jitter: bool,
        /// Observation CSV to filter instead of simulating fresh data.
        #[arg(long)]
        obs: Option<PathBuf>,
    },
    /// Sweep N = M and fit the inverse-square-root error rate.
    Sweep(Common),
    /// Check the bootstrap filter against the exact Kalman filter.
    KalmanCheck(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(common) => {
            let (cfg, out) = load(&common)?;
            let s = run_simulate(&cfg, &out)?;
            println!("simulated {} observation epochs into {}", s.n_obs, out.display());
        }
        Command::Run { common, no_jitter, obs } => {
            let (cfg, out) = load(&common)?;
            let obs = obs.map(|p| read_observations(&p, obs_dim(cfg.model))).transpose()?;
            let s = run_npf(&cfg, no_jitter, obs.as_deref(), &out)?;
            let last = s.mean_errors.last().context("no epochs were filtered")?;
            println!(
                "final mean normalised error [{}]: {}",
                cfg.param_names().join(", "),
                fmt_vec(last)
            );
        }
        Command::Sweep(common) => {
            let (cfg, out) = load(&common)?;
            let s = run_sweep(&cfg, &out)?;
            for f in &s.fits {
                let slope = f.slope.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
                println!("{}: c_hat = {:.4}, log-log slope = {slope}", f.name, f.c_hat);
            }
        }
        Command::KalmanCheck(common) => {
            let (cfg, out) = load(&common)?;
            let s = run_kalman_check(&cfg, &out)?;
            println!(
                "mean |PF - Kalman| = {:.4} (tol {}), max log-marginal gap = {:.4} (tol {}): {}",
                s.mean_abs_dev,
                cfg.kalman.mean_tolerance,
                s.max_log_marginal_gap,
                cfg.kalman.log_marginal_tolerance,
                if s.passed { "PASS" } else { "FAIL" }
            );
            return Ok(s.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads_from_env().and_then(|threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("building the worker pool")?;
        run(cli)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
