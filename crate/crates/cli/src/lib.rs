//! Experiment drivers behind the `npf` binary.
//!
//! [`config::ExperimentConfig`] is a JSON document whose defaults reproduce the
//! desk-scale Lorenz 63 experiment. The [`experiment`] module holds one
//! function per run mode; each writes CSVs plus a `manifest.json`.

pub mod config;
pub mod experiment;
pub mod manifest;

pub use config::{ExperimentConfig, KernelSpec, ModelKind};
pub use experiment::{run_kalman_check, run_npf, run_simulate, run_sweep};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "NPF_THREADS";

/// Thread count from [`THREADS_ENV`], or the available parallelism when unset.
pub fn threads_from_env() -> anyhow::Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
            anyhow::ensure!(n >= 1, "{THREADS_ENV} must be at least 1");
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}
