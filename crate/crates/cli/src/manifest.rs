//! `manifest.json`: what produced an output directory and what it contains.

use std::path::Path;
use std::process::Command;

use anyhow::{ensure, Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

pub const TRUTH_POLICY: &str = "Ground truth is re-simulated for every repeat from a seed derived from (seed, repeat).";

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub mode: String,
    pub config: ExperimentConfig,
    pub git_describe: String,
    pub truth_policy: String,
    pub threads: usize,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    /// Wall-clock seconds per filter step, one list per run.
    pub step_seconds: Vec<Vec<f64>>,
}

impl Manifest {
    pub fn new(mode: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            mode: mode.to_string(),
            config: cfg.clone(),
            git_describe: git_describe(),
            truth_policy: TRUTH_POLICY.to_string(),
            threads: rayon::current_num_threads(),
            files: Vec::new(),
            step_seconds: Vec::new(),
        }
    }

    /// Write `manifest.json` after checking that every listed file is in place.
    pub fn write(&self, out: &Path) -> Result<()> {
        for f in &self.files {
            let meta = std::fs::metadata(out.join(f)).with_context(|| format!("listed output {f} is missing"))?;
            ensure!(meta.len() > 0, "listed output {f} is empty");
        }
        let path = out.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}
