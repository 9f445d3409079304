//! Experiment configuration, read from a single JSON document.
//!
//! Every field has a default, so `{}` describes the desk-scale Lorenz run.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use npf_core::{lorenz63, JitterKernel, LinearGaussianModel, LorenzConfig, SupportBox};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lorenz63,
    LinearGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `constants` defaults to the model's own constants.
    TruncatedGaussian {
        #[serde(default)]
        constants: Option<Vec<f64>>,
        #[serde(default = "default_p")]
        p: f64,
    },
    /// Fixed `epsilon` when given, otherwise `min(1, N^{-p/2})`.
    MixtureDirac {
        #[serde(default = "default_p")]
        p: f64,
        #[serde(default)]
        epsilon: Option<f64>,
    },
    Dirac,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::TruncatedGaussian {
            constants: None,
            p: default_p(),
        }
    }
}

fn default_p() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzSection {
    pub t_e: f64,
    pub obs_gap: usize,
    pub obs_var: f64,
    pub x_star: [f64; 3],
    pub v0_sq: f64,
}

impl Default for LorenzSection {
    fn default() -> Self {
        let c = LorenzConfig::default();
        Self {
            t_e: c.t_e,
            obs_gap: c.obs_gap,
            obs_var: c.obs_var,
            x_star: c.x_star,
            v0_sq: c.v0_sq,
        }
    }
}

impl LorenzSection {
    pub fn to_core(&self) -> LorenzConfig {
        LorenzConfig {
            t_e: self.t_e,
            obs_gap: self.obs_gap,
            obs_var: self.obs_var,
            x_star: self.x_star,
            v0_sq: self.v0_sq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearGaussianSection {
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
    /// Bounds of the prior box for `a`.
    pub support: [f64; 2],
    /// Truncated-Gaussian jitter constant used when the kernel leaves it unset.
    pub jitter_constant: f64,
}

impl Default for LinearGaussianSection {
    fn default() -> Self {
        Self {
            q: 1.0,
            r: 1.0,
            m0: 0.0,
            p0: 1.0,
            support: [-1.0, 1.0],
            jitter_constant: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Outer sizes; the inner size equals the outer one.
    pub n_list: Vec<usize>,
    /// Fraction of the horizon, counted from the end, over which errors are averaged.
    pub window_fraction: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_list: vec![50, 100, 200],
            window_fraction: 1.0 / 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanSection {
    pub a: f64,
    pub m: usize,
    pub steps: usize,
    pub seeds: usize,
    pub mean_tolerance: f64,
    pub log_marginal_tolerance: f64,
}

impl Default for KalmanSection {
    fn default() -> Self {
        Self {
            a: 0.9,
            m: 5000,
            steps: 50,
            seeds: 20,
            mean_tolerance: 0.15,
            log_marginal_tolerance: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub n_obs: usize,
    pub repeats: usize,
    pub kernel: KernelSpec,
    pub lorenz: LorenzSection,
    pub linear_gaussian: LinearGaussianSection,
    /// Defaults to the model's reference values: `(10, 28, 8/3, 0.8)` or `a = 0.9`.
    pub true_params: Option<Vec<f64>>,
    pub budget_cap: usize,
    pub output_dir: PathBuf,
    pub sweep: SweepSection,
    pub kalman: KalmanSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Lorenz63,
            seed: 0,
            n: 100,
            m: 100,
            n_obs: 300,
            repeats: 10,
            kernel: KernelSpec::default(),
            lorenz: LorenzSection::default(),
            linear_gaussian: LinearGaussianSection::default(),
            true_params: None,
            budget_cap: 1_000_000,
            output_dir: PathBuf::from("out"),
            sweep: SweepSection::default(),
            kalman: KalmanSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n >= 1 && self.m >= 1, "N and M must be at least 1");
        ensure!(self.n_obs >= 1, "n_obs must be at least 1");
        ensure!(self.repeats >= 1, "repeats must be at least 1");
        let budget = self.n.saturating_mul(self.m);
        ensure!(
            budget <= self.budget_cap,
            "N*M = {budget} exceeds the budget cap {}",
            self.budget_cap
        );
        let largest = self.sweep.n_list.iter().copied().max().unwrap_or(0);
        ensure!(
            largest.saturating_mul(largest) <= self.budget_cap,
            "sweep size {largest}^2 exceeds the budget cap {}",
            self.budget_cap
        );
        ensure!(
            self.sweep.window_fraction > 0.0 && self.sweep.window_fraction <= 1.0,
            "sweep window fraction must lie in (0, 1]"
        );
        ensure!(
            self.kalman.m >= 1 && self.kalman.steps >= 1 && self.kalman.seeds >= 1,
            "kalman sizes must be positive"
        );
        if let Some(tp) = &self.true_params {
            let support = self.support()?;
            ensure!(tp.len() == support.dim(), "true_params needs {} values", support.dim());
            ensure!(
                support.contains(&npf_core::ParamVector::new(tp.clone()))?,
                "true_params lie outside the parameter box"
            );
        }
        self.lorenz.to_core().validate()?;
        self.kernel(false)?;
        Ok(())
    }

    pub fn support(&self) -> Result<SupportBox> {
        Ok(match self.model {
            ModelKind::Lorenz63 => lorenz63::support(),
            ModelKind::LinearGaussian => {
                let [lo, hi] = self.linear_gaussian.support;
                SupportBox::new(vec![lo], vec![hi])?
            }
        })
    }

    pub fn true_params(&self) -> Vec<f64> {
        match (&self.true_params, self.model) {
            (Some(tp), _) => tp.clone(),
            (None, ModelKind::Lorenz63) => lorenz63::TRUE_PARAMS.to_vec(),
            (None, ModelKind::LinearGaussian) => vec![0.9],
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self.model {
            ModelKind::Lorenz63 => lorenz63::PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
            ModelKind::LinearGaussian => vec!["a".to_string()],
        }
    }

    /// The configured jitter kernel, or the no-jitter kernel when `no_jitter` is set.
    pub fn kernel(&self, no_jitter: bool) -> Result<JitterKernel> {
        let support = self.support()?;
        if no_jitter {
            return Ok(JitterKernel::dirac(support));
        }
        Ok(match &self.kernel {
            KernelSpec::TruncatedGaussian { constants, p } => {
                let constants = match (constants, self.model) {
                    (Some(c), _) => c.clone(),
                    (None, ModelKind::Lorenz63) => vec![60.0, 60.0, 10.0, 1.0],
                    (None, ModelKind::LinearGaussian) => vec![self.linear_gaussian.jitter_constant],
                };
                JitterKernel::truncated_gaussian(constants, *p, support)?
            }
            KernelSpec::MixtureDirac { epsilon: Some(e), .. } => JitterKernel::mixture_dirac_fixed(*e, support)?,
            KernelSpec::MixtureDirac { p, epsilon: None } => JitterKernel::mixture_dirac(*p, support)?,
            KernelSpec::Dirac => JitterKernel::dirac(support),
        })
    }

    pub fn lorenz_model(&self) -> Result<npf_core::LorenzModel> {
        Ok(npf_core::LorenzModel::new(self.lorenz.to_core())?)
    }

    /// Linear-Gaussian model with `a` taken from the true parameters.
    pub fn linear_gaussian_model(&self) -> Result<LinearGaussianModel> {
        let lg = &self.linear_gaussian;
        let a = self.true_params()[0];
        let model = LinearGaussianModel::new(a, lg.q, lg.r)?
            .with_support(lg.support[0], lg.support[1])?
            .with_state_prior(lg.m0, lg.p0)?;
        Ok(model)
    }

    pub fn require_model(&self, kind: ModelKind) -> Result<()> {
        if self.model != kind {
            bail!("this mode needs model {:?}, config selects {:?}", kind, self.model);
        }
        Ok(())
    }
}
