//! The recursive nested particle filter.
//!
//! The outer layer holds `N` parameter particles, each paired with an inner
//! bootstrap filter of `M` state particles. One step, for observation `y_t`:
//!
//! 1. for every `i` (in parallel): jitter `theta_i`, push its inner particles one
//!    step forward under the jittered value, estimate `u_t^M` from the
//!    predicted set, and resample the inner set;
//! 2. normalise the outer weights `w_i ∝ u_t^M(theta_i)`;
//! 3. resample `(theta, inner set)` pairs with those weights.
//!
//! Inner sets are carried forward, never re-run from time zero, so the cost
//! of a step does not grow with `t`.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::diagnostics::{compute_ness, NessRecord};
use crate::error::{Error, Result};
use crate::inner_filter::{
    estimate_likelihood, multinomial_indices, propagate, resample_multinomial, InnerParticleSet,
};
use crate::jitter::JitterKernel;
use crate::math::normalize_log_weights;
use crate::model::{ObsVector, ParamVector, StateSpaceModel, StateVector};
use crate::seed;
use crate::FilterRng;

/// One outer particle: a parameter value and its conditional filter.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterParticle {
    pub theta: ParamVector,
    pub inner: InnerParticleSet,
}

/// `N` outer particles at epoch `t`, equally weighted after resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedSystem {
    particles: Vec<OuterParticle>,
    t: usize,
}

/// Summary of one step. Weighted statistics come from the jittered population
/// before outer resampling; `mu_hat` is the resampled population.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub t: usize,
    pub mu_hat: Vec<ParamVector>,
    pub ness: NessRecord,
    pub param_mean: Vec<f64>,
    pub joint_state_mean: Vec<f64>,
    pub per_theta_log_u: Vec<f64>,
    pub max_log_u: f64,
    /// Index of the pre-resampling particle each resampled particle was copied from.
    pub ancestors: Vec<usize>,
}

impl NestedSystem {
    /// Draw `theta_i` from the parameter prior and every `x_ij` from the state prior.
    pub fn initialize<S: StateSpaceModel, R: Rng + ?Sized>(model: &S, n: usize, m: usize, rng: &mut R) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::contract(format!("N and M must be at least 1, got N={n}, M={m}")));
        }
        let particles = (0..n)
            .map(|_| {
                let theta = model.sample_param_prior(rng);
                let inner = InnerParticleSet::from_prior(model, m, rng)?;
                Ok(OuterParticle { theta, inner })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { particles, t: 0 })
    }

    pub fn from_particles(particles: Vec<OuterParticle>, t: usize) -> Result<Self> {
        let Some(first) = particles.first() else {
            return Err(Error::contract("nested system needs at least one outer particle"));
        };
        let m = first.inner.len();
        if particles.iter().any(|p| p.inner.len() != m) {
            return Err(Error::contract(
                "every inner set must hold the same number of particles",
            ));
        }
        Ok(Self { particles, t })
    }

    pub fn n(&self) -> usize {
        self.particles.len()
    }

    pub fn m(&self) -> usize {
        self.particles[0].inner.len()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn particles(&self) -> &[OuterParticle] {
        &self.particles
    }

    pub fn thetas(&self) -> Vec<ParamVector> {
        self.particles.iter().map(|p| p.theta.clone()).collect()
    }

    /// `(h, mu_t^{N,M}) = (1/N) sum_i h(theta_i)`.
    pub fn estimate_param<H: Fn(&ParamVector) -> f64>(&self, h: H) -> f64 {
        self.particles.iter().map(|p| h(&p.theta)).sum::<f64>() / self.n() as f64
    }

    /// `(f, pi_t^{N,M}) = (1/NM) sum_i sum_j f(theta_i, x_ij)`.
    pub fn estimate_joint<F: Fn(&ParamVector, &StateVector) -> f64>(&self, f: F) -> f64 {
        let m = self.m() as f64;
        self.particles
            .iter()
            .map(|p| p.inner.particles().iter().map(|x| f(&p.theta, x)).sum::<f64>() / m)
            .sum::<f64>()
            / self.n() as f64
    }

    /// Advance one epoch with observation `y`.
    ///
    /// Per-particle work draws from child streams seeded by one draw of `rng`
    /// plus the particle index, so the result does not depend on the number of
    /// worker threads. On error the system is left unchanged.
    pub fn step<S: StateSpaceModel, R: Rng + ?Sized>(
        &mut self,
        model: &S,
        kernel: &JitterKernel,
        y: &ObsVector,
        rng: &mut R,
    ) -> Result<StepOutput> {
        let n = self.n();
        let t = self.t + 1;
        if !y.is_finite() {
            return Err(Error::contract(format!("observation at epoch {t} is not finite")));
        }
        let base = rng.next_u64();

        let jittered: Vec<(ParamVector, InnerParticleSet, f64)> = self
            .particles
            .par_iter()
            .enumerate()
            .map(|(i, particle)| {
                let mut child = seed::child_rng(base, i as u64);
                let theta = kernel.sample(&particle.theta, n, &mut child)?;
                let predicted = propagate(&particle.inner, model, &theta, t, &mut child);
                let est = estimate_likelihood(&predicted, model, &theta, y, t);
                let filtered = if est.log_u.is_finite() {
                    resample_multinomial(&predicted, &est.per_particle_log_g, &mut child)?
                } else {
                    // zero outer weight: never selected by the outer resampling
                    predicted
                };
                Ok((theta, filtered, est.log_u))
            })
            .collect::<Result<Vec<_>>>()?;

        let thetas: Vec<ParamVector> = jittered.iter().map(|(th, _, _)| th.clone()).collect();
        let log_u: Vec<f64> = jittered.iter().map(|(_, _, lu)| *lu).collect();
        let weights = normalize_log_weights(&log_u).ok_or(Error::DegenerateSystem { epoch: t })?;
        let ness = compute_ness(&thetas, &log_u).map_err(|_| Error::DegenerateSystem { epoch: t })?;

        let support = model.support();
        let mut param_mean = vec![0.0; support.dim()];
        let mut joint_state_mean = vec![0.0; model.state_dim()];
        for ((theta, inner, _), &w) in jittered.iter().zip(&weights) {
            if w == 0.0 {
                continue;
            }
            param_mean.iter_mut().zip(theta.iter()).for_each(|(a, c)| *a += w * c);
            if let Some(mean) = inner.mean() {
                joint_state_mean.iter_mut().zip(&mean).for_each(|(a, c)| *a += w * c);
            }
        }
        for (k, v) in param_mean.iter_mut().enumerate() {
            let (lo, hi) = support.bounds(k);
            *v = v.clamp(lo, hi);
        }
        let max_log_u = log_u.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let ancestors = multinomial_indices(&log_u, n, rng).map_err(|_| Error::DegenerateSystem { epoch: t })?;
        self.particles = ancestors
            .iter()
            .map(|&l| OuterParticle {
                theta: jittered[l].0.clone(),
                inner: jittered[l].1.clone(),
            })
            .collect();
        self.t = t;

        Ok(StepOutput {
            t,
            mu_hat: self.thetas(),
            ness,
            param_mean,
            joint_state_mean,
            per_theta_log_u: log_u,
            max_log_u,
            ancestors,
        })
    }
}

/// A model, a kernel, a nested system and its random stream, stepped together.
pub struct NestedFilter<'a, S> {
    model: &'a S,
    kernel: JitterKernel,
    system: NestedSystem,
    rng: FilterRng,
}

impl<'a, S: StateSpaceModel> NestedFilter<'a, S> {
    pub fn new(model: &'a S, kernel: JitterKernel, n: usize, m: usize, seed: u64) -> Result<Self> {
        if kernel.support() != model.support() {
            return Err(Error::contract(
                "jitter kernel support differs from the model's parameter support",
            ));
        }
        let mut rng = FilterRng::seed_from_u64(seed);
        let system = NestedSystem::initialize(model, n, m, &mut rng)?;
        Ok(Self {
            model,
            kernel,
            system,
            rng,
        })
    }

    pub fn system(&self) -> &NestedSystem {
        &self.system
    }

    pub fn kernel(&self) -> &JitterKernel {
        &self.kernel
    }

    pub fn step(&mut self, y: &ObsVector) -> Result<StepOutput> {
        self.system.step(self.model, &self.kernel, y, &mut self.rng)
    }

    /// Process every observation in order.
    pub fn run(&mut self, observations: &[ObsVector]) -> Result<Vec<StepOutput>> {
        observations.iter().map(|y| self.step(y)).collect()
    }
}

/// Header of the per-step CSV: `t,ness,param_mean_1..,state_mean_1..,max_log_u`.
pub fn write_step_csv_header<W: Write>(mut w: W, d_theta: usize, d_x: usize) -> io::Result<()> {
    write!(w, "t,ness")?;
    for k in 1..=d_theta {
        write!(w, ",param_mean_{k}")?;
    }
    for k in 1..=d_x {
        write!(w, ",state_mean_{k}")?;
    }
    writeln!(w, ",max_log_u")
}

impl StepOutput {
    pub fn write_csv_row<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "{},{:.16e}", self.t, self.ness.ness)?;
        for v in self.param_mean.iter().chain(&self.joint_state_mean) {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w, ",{:.16e}", self.max_log_u)
    }

    /// Row of the NESS CSV: `t,ness,n_distinct,max_replicas`.
    pub fn write_ness_row<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "{},{:.16e},{},{}",
            self.t, self.ness.ness, self.ness.n_distinct, self.ness.max_replicas
        )
    }
}

pub const NESS_CSV_HEADER: &str = "t,ness,n_distinct,max_replicas";
