//! Stochastic Lorenz 63 system, Euler-Maruyama discretised and partially observed.
//!
//! State `x = (x1, x2, x3)`, parameters `theta = (S, R, B, k_o)`. The filters run
//! at observation epochs: one transition of [`LorenzModel`] chains `obs_gap`
//! Euler steps, and each epoch observes `(k_o x1, k_o x3)` in Gaussian noise.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{ObsVector, ParamVector, StateSpaceModel, StateVector, SupportBox};

/// Any state coordinate beyond this magnitude counts as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Prior bounds for `(S, R, B, k_o)`.
pub const PARAM_LOWER: [f64; 4] = [5.0, 18.0, 1.0, 0.5];
pub const PARAM_UPPER: [f64; 4] = [20.0, 50.0, 8.0, 3.0];

/// Parameter values used to generate the reference trajectories.
pub const TRUE_PARAMS: [f64; 4] = [10.0, 28.0, 8.0 / 3.0, 0.8];

pub const PARAM_NAMES: [&str; 4] = ["S", "R", "B", "k_o"];

pub fn support() -> SupportBox {
    SupportBox::new(PARAM_LOWER.to_vec(), PARAM_UPPER.to_vec()).expect("static bounds are ordered")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorenzConfig {
    /// Euler-Maruyama integration step, in continuous time units.
    pub t_e: f64,
    /// Euler steps between consecutive observations.
    pub obs_gap: usize,
    /// Observation noise variance.
    pub obs_var: f64,
    /// Mean of the Gaussian prior on `x_0`.
    pub x_star: [f64; 3],
    /// Per-coordinate variance of the prior on `x_0`.
    pub v0_sq: f64,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        Self {
            t_e: 1e-3,
            obs_gap: 40,
            obs_var: 0.1,
            x_star: [-5.91652, -5.52332, 24.5723],
            v0_sq: 10.0,
        }
    }
}

impl LorenzConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_e > 0.0 && self.t_e.is_finite()) {
            return Err(Error::contract(format!("t_e must be positive, got {}", self.t_e)));
        }
        if self.obs_gap < 1 {
            return Err(Error::contract("obs_gap must be at least 1"));
        }
        if !(self.obs_var > 0.0 && self.obs_var.is_finite()) {
            return Err(Error::contract(format!(
                "obs_var must be positive, got {}",
                self.obs_var
            )));
        }
        if !(self.v0_sq > 0.0 && self.v0_sq.is_finite()) {
            return Err(Error::contract(format!("v0_sq must be positive, got {}", self.v0_sq)));
        }
        if !self.x_star.iter().all(|c| c.is_finite()) {
            return Err(Error::contract("x_star must be finite"));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn euler_step_raw(s: f64, r: f64, b: f64, x: [f64; 3], noise: [f64; 3], t_e: f64, sqrt_te: f64) -> [f64; 3] {
    let [x1, x2, x3] = x;
    [
        x1 - t_e * s * (x1 - x2) + sqrt_te * noise[0],
        x2 + t_e * (r * x1 - x2 - x1 * x3) + sqrt_te * noise[1],
        x3 + t_e * (x1 * x2 - b * x3) + sqrt_te * noise[2],
    ]
}

/// One Euler-Maruyama step. Only `(S, R, B)` of `theta` are used.
pub fn euler_step(theta: &ParamVector, x: &StateVector, noise: [f64; 3], t_e: f64) -> StateVector {
    let next = euler_step_raw(theta[0], theta[1], theta[2], [x[0], x[1], x[2]], noise, t_e, t_e.sqrt());
    StateVector::from(next)
}

/// Noisy partial observation `(k_o x1 + std n1, k_o x3 + std n2)`.
pub fn observe(theta: &ParamVector, x: &StateVector, noise: [f64; 2], obs_std: f64) -> ObsVector {
    let k_o = theta[3];
    ObsVector::from([k_o * x[0] + obs_std * noise[0], k_o * x[2] + obs_std * noise[1]])
}

#[inline]
fn diverged(x: &[f64; 3]) -> bool {
    x.iter().any(|c| !(c.abs() <= DIVERGENCE_THRESHOLD))
}

/// A simulated reference run.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub initial_state: StateVector,
    /// `states[k]` is the state after `k + 1` Euler steps.
    pub states: Vec<StateVector>,
    /// `observations[n - 1]` is taken at Euler step `n * obs_gap`.
    pub observations: Vec<ObsVector>,
    pub true_params: ParamVector,
    pub obs_gap: usize,
    pub t_e: f64,
}

impl GroundTruth {
    pub fn n_epochs(&self) -> usize {
        self.observations.len()
    }

    /// State at Euler step `step` (step 0 is the initial state).
    pub fn state_at(&self, step: usize) -> &StateVector {
        if step == 0 {
            &self.initial_state
        } else {
            &self.states[step - 1]
        }
    }

    /// State at observation epoch `n >= 1`.
    pub fn epoch_state(&self, n: usize) -> &StateVector {
        self.state_at(n * self.obs_gap)
    }

    /// One row per observation epoch: `epoch,t_continuous,x1,x2,x3,y1,y3`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "epoch,t_continuous,x1,x2,x3,y1,y3")?;
        for (i, y) in self.observations.iter().enumerate() {
            let n = i + 1;
            let x = self.epoch_state(n);
            let t = (n * self.obs_gap) as f64 * self.t_e;
            writeln!(
                w,
                "{n},{t:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                x[0], x[1], x[2], y[0], y[1]
            )?;
        }
        Ok(())
    }
}

/// Simulate `n_steps` Euler steps from `x_0 ~ N(x_*, v0^2 I)`, observing every
/// `obs_gap` steps.
pub fn simulate_truth<R: Rng + ?Sized>(
    cfg: &LorenzConfig,
    theta: &ParamVector,
    n_steps: usize,
    rng: &mut R,
) -> Result<GroundTruth> {
    simulate_with_obs_std(cfg, theta, n_steps, rng, cfg.obs_var.sqrt())
}

pub(crate) fn simulate_with_obs_std<R: Rng + ?Sized>(
    cfg: &LorenzConfig,
    theta: &ParamVector,
    n_steps: usize,
    rng: &mut R,
    obs_std: f64,
) -> Result<GroundTruth> {
    cfg.validate()?;
    if theta.dim() != 4 {
        return Err(Error::Dimension {
            expected: 4,
            got: theta.dim(),
        });
    }
    if n_steps < cfg.obs_gap {
        return Err(Error::contract(format!(
            "n_steps ({n_steps}) must be at least obs_gap ({})",
            cfg.obs_gap
        )));
    }
    let v0 = cfg.v0_sq.sqrt();
    let mut x = [0.0; 3];
    for (k, c) in x.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        *c = cfg.x_star[k] + v0 * z;
    }
    let initial_state = StateVector::from(x);
    let sqrt_te = cfg.t_e.sqrt();
    let mut states = Vec::with_capacity(n_steps);
    let mut observations = Vec::with_capacity(n_steps / cfg.obs_gap);
    for step in 1..=n_steps {
        let noise = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        x = euler_step_raw(theta[0], theta[1], theta[2], x, noise, cfg.t_e, sqrt_te);
        if diverged(&x) {
            return Err(Error::Divergence { step });
        }
        let state = StateVector::from(x);
        if step % cfg.obs_gap == 0 {
            let n = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
            observations.push(observe(theta, &state, n, obs_std));
        }
        states.push(state);
    }
    Ok(GroundTruth {
        initial_state,
        states,
        observations,
        true_params: theta.clone(),
        obs_gap: cfg.obs_gap,
        t_e: cfg.t_e,
    })
}

/// The Lorenz system as a [`StateSpaceModel`] over observation epochs.
#[derive(Debug, Clone)]
pub struct LorenzModel {
    cfg: LorenzConfig,
    support: SupportBox,
    sqrt_te: f64,
    v0: f64,
}

impl LorenzModel {
    pub fn new(cfg: LorenzConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            sqrt_te: cfg.t_e.sqrt(),
            v0: cfg.v0_sq.sqrt(),
            cfg,
            support: support(),
        })
    }

    pub fn config(&self) -> &LorenzConfig {
        &self.cfg
    }
}

impl StateSpaceModel for LorenzModel {
    fn state_dim(&self) -> usize {
        3
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn sample_state_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector {
        let mut x = [0.0; 3];
        for (k, c) in x.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *c = self.cfg.x_star[k] + self.v0 * z;
        }
        StateVector::from(x)
    }

    fn sample_transition<R: Rng + ?Sized>(
        &self,
        theta: &ParamVector,
        x_prev: &StateVector,
        t: usize,
        rng: &mut R,
    ) -> Result<StateVector> {
        let (s, r, b) = (theta[0], theta[1], theta[2]);
        let mut x = [x_prev[0], x_prev[1], x_prev[2]];
        for k in 0..self.cfg.obs_gap {
            let noise = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            x = euler_step_raw(s, r, b, x, noise, self.cfg.t_e, self.sqrt_te);
            if diverged(&x) {
                let base = t.saturating_sub(1) * self.cfg.obs_gap;
                return Err(Error::Divergence { step: base + k + 1 });
            }
        }
        Ok(StateVector::from(x))
    }

    fn log_likelihood(&self, theta: &ParamVector, x: &StateVector, y: &ObsVector, _t: usize) -> f64 {
        let k_o = theta[3];
        let var = self.cfg.obs_var;
        let d1 = y[0] - k_o * x[0];
        let d3 = y[1] - k_o * x[2];
        let ll = -(std::f64::consts::TAU * var).ln() - (d1 * d1 + d3 * d3) / (2.0 * var);
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    }

    fn sample_param_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        self.support.sample_uniform(rng)
    }

    fn support(&self) -> &SupportBox {
        &self.support
    }
}
