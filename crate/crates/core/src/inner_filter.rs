//! Bootstrap particle filter conditional on a fixed parameter value.
//!
//! The recursion alternates two random maps on a set of `M` state particles:
//! [`propagate`] draws every particle forward through the transition kernel,
//! and [`resample_multinomial`] reweights by the likelihood and resamples with
//! replacement. The likelihood estimate `u_t^M(theta)` is the particle average
//! of `g(y_t | x)` over the propagated (pre-resampling) set.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{logsumexp, normalize_log_weights};
use crate::model::{ObsVector, ParamVector, StateSpaceModel, StateVector};

/// `M` state particles with implicit uniform weights.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerParticleSet {
    particles: Vec<StateVector>,
}

impl InnerParticleSet {
    pub fn new(particles: Vec<StateVector>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::contract("particle set must hold at least one particle"));
        }
        Ok(Self { particles })
    }

    /// `M` i.i.d. draws from the model's state prior.
    pub fn from_prior<S: StateSpaceModel, R: Rng + ?Sized>(model: &S, m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(Error::contract("M must be at least 1"));
        }
        Ok(Self {
            particles: (0..m).map(|_| model.sample_state_prior(rng)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[StateVector] {
        &self.particles
    }

    pub fn n_diverged(&self) -> usize {
        self.particles.iter().filter(|x| !x.is_finite()).count()
    }

    /// Componentwise mean over finite particles; `None` if every particle diverged.
    pub fn mean(&self) -> Option<Vec<f64>> {
        let dim = self.particles[0].dim();
        let mut acc = vec![0.0; dim];
        let mut count = 0usize;
        for x in self.particles.iter().filter(|x| x.is_finite()) {
            acc.iter_mut().zip(x.iter()).for_each(|(a, c)| *a += c);
            count += 1;
        }
        if count == 0 {
            return None;
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        Some(acc)
    }
}

/// Log of the particle-average likelihood, with the per-particle terms kept
/// for the resampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEstimate {
    pub log_u: f64,
    pub per_particle_log_g: Vec<f64>,
}

/// Draw each particle forward through the transition kernel at time `t`.
///
/// A particle whose transition diverges becomes the [`StateVector::diverged`]
/// sentinel and is removed at the next resampling.
pub fn propagate<S: StateSpaceModel, R: Rng + ?Sized>(
    set: &InnerParticleSet,
    model: &S,
    theta: &ParamVector,
    t: usize,
    rng: &mut R,
) -> InnerParticleSet {
    let dim = model.state_dim();
    let particles = set
        .particles
        .iter()
        .map(|x| {
            if !x.is_finite() {
                return StateVector::diverged(dim);
            }
            model
                .sample_transition(theta, x, t, rng)
                .unwrap_or_else(|_| StateVector::diverged(dim))
        })
        .collect();
    InnerParticleSet { particles }
}

/// `log u_t^M(theta) = logsumexp(log g_j) - log M` over the predicted set.
///
/// An all-`-inf` result is a valid value signalling a parameter that cannot
/// explain `y`, not an error.
pub fn estimate_likelihood<S: StateSpaceModel>(
    set_predicted: &InnerParticleSet,
    model: &S,
    theta: &ParamVector,
    y: &ObsVector,
    t: usize,
) -> LikelihoodEstimate {
    let per_particle_log_g: Vec<f64> = set_predicted
        .particles
        .iter()
        .map(|x| {
            if !x.is_finite() {
                return f64::NEG_INFINITY;
            }
            let ll = model.log_likelihood(theta, x, y, t);
            if ll.is_nan() {
                f64::NEG_INFINITY
            } else {
                ll
            }
        })
        .collect();
    let log_u = logsumexp(&per_particle_log_g) - (per_particle_log_g.len() as f64).ln();
    LikelihoodEstimate {
        log_u,
        per_particle_log_g,
    }
}

/// `count` i.i.d. indices drawn with probabilities proportional to `exp(log_w)`.
pub fn multinomial_indices<R: Rng + ?Sized>(log_w: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    let w = normalize_log_weights(log_w).ok_or(Error::DegenerateWeights { step: None })?;
    if w.len() == 1 {
        return Ok(vec![0; count]);
    }
    let dist = WeightedIndex::new(&w).map_err(|e| Error::contract(format!("invalid weights: {e}")))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}

/// Multinomial resampling of `set` with weights `exp(log_g)`.
pub fn resample_multinomial<R: Rng + ?Sized>(
    set: &InnerParticleSet,
    per_particle_log_g: &[f64],
    rng: &mut R,
) -> Result<InnerParticleSet> {
    if per_particle_log_g.len() != set.len() {
        return Err(Error::Dimension {
            expected: set.len(),
            got: per_particle_log_g.len(),
        });
    }
    let idx = multinomial_indices(per_particle_log_g, set.len(), rng)?;
    Ok(InnerParticleSet {
        particles: idx.into_iter().map(|j| set.particles[j].clone()).collect(),
    })
}

/// One recursive step: propagate, estimate the likelihood, resample.
pub fn bootstrap_step<S: StateSpaceModel, R: Rng + ?Sized>(
    set: &InnerParticleSet,
    model: &S,
    theta: &ParamVector,
    y: &ObsVector,
    t: usize,
    rng: &mut R,
) -> Result<(InnerParticleSet, LikelihoodEstimate)> {
    let predicted = propagate(set, model, theta, t, rng);
    let est = estimate_likelihood(&predicted, model, theta, y, t);
    let filtered = resample_multinomial(&predicted, &est.per_particle_log_g, rng).map_err(|e| match e {
        Error::DegenerateWeights { .. } => Error::DegenerateWeights { step: Some(t) },
        other => other,
    })?;
    Ok((filtered, est))
}

/// Output of [`run_bootstrap`].
#[derive(Debug, Clone)]
pub struct BootstrapRun {
    /// Prior sample at time 0.
    pub initial: InnerParticleSet,
    /// Filtered set and likelihood estimate after each observation.
    pub steps: Vec<(InnerParticleSet, LikelihoodEstimate)>,
}

impl BootstrapRun {
    /// Filter means after each observation.
    pub fn filter_means(&self) -> Vec<Vec<f64>> {
        self.steps
            .iter()
            .map(|(set, _)| set.mean().expect("filtered sets hold finite particles"))
            .collect()
    }

    /// Estimated log marginal likelihood of all observations.
    pub fn log_marginal(&self) -> f64 {
        self.steps.iter().map(|(_, est)| est.log_u).sum()
    }
}

/// Bootstrap filter over `observations` (time `t = 1, 2, ...`) with `theta` held fixed.
pub fn run_bootstrap<S: StateSpaceModel, R: Rng + ?Sized>(
    model: &S,
    theta: &ParamVector,
    observations: &[ObsVector],
    m: usize,
    rng: &mut R,
) -> Result<BootstrapRun> {
    let initial = InnerParticleSet::from_prior(model, m, rng)?;
    let mut steps = Vec::with_capacity(observations.len());
    let mut current = initial.clone();
    for (i, y) in observations.iter().enumerate() {
        let (next, est) = bootstrap_step(&current, model, theta, y, i + 1, rng)?;
        current = next.clone();
        steps.push((next, est));
    }
    Ok(BootstrapRun { initial, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearGaussianModel, SupportBox};
    use crate::FilterRng;
    use rand::SeedableRng;

    /// Deterministic identity dynamics with a likelihood read off the first coordinate.
    struct Identity {
        support: SupportBox,
    }

    impl Identity {
        fn new() -> Self {
            Self {
                support: SupportBox::unit(1),
            }
        }
    }

    impl StateSpaceModel for Identity {
        fn state_dim(&self) -> usize {
            1
        }
        fn obs_dim(&self) -> usize {
            1
        }
        fn sample_state_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector {
            StateVector::from([rng.random::<f64>()])
        }
        fn sample_transition<R: Rng + ?Sized>(
            &self,
            _theta: &ParamVector,
            x: &StateVector,
            t: usize,
            _rng: &mut R,
        ) -> Result<StateVector> {
            if x[0] > 1e6 {
                Err(Error::Divergence { step: t })
            } else {
                Ok(x.clone())
            }
        }
        fn log_likelihood(&self, _theta: &ParamVector, x: &StateVector, _y: &ObsVector, _t: usize) -> f64 {
            x[0]
        }
        fn sample_param_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
            self.support.sample_uniform(rng)
        }
        fn support(&self) -> &SupportBox {
            &self.support
        }
    }

    fn set_of(xs: &[f64]) -> InnerParticleSet {
        InnerParticleSet::new(xs.iter().map(|&x| StateVector::from([x])).collect()).unwrap()
    }

    fn theta0() -> ParamVector {
        ParamVector::from([0.5])
    }

    #[test]
    fn identity_propagation_is_identity() {
        let set = set_of(&[0.1, 0.2, 0.3]);
        let mut rng = FilterRng::seed_from_u64(0);
        assert_eq!(propagate(&set, &Identity::new(), &theta0(), 1, &mut rng), set);
    }

    #[test]
    fn divergent_particles_become_sentinels() {
        let set = set_of(&[0.1, 2e6]);
        let mut rng = FilterRng::seed_from_u64(0);
        let out = propagate(&set, &Identity::new(), &theta0(), 1, &mut rng);
        assert_eq!(out.n_diverged(), 1);
        let est = estimate_likelihood(&out, &Identity::new(), &theta0(), &ObsVector::from([0.0]), 1);
        assert_eq!(est.per_particle_log_g[1], f64::NEG_INFINITY);
        let resampled = resample_multinomial(&out, &est.per_particle_log_g, &mut rng).unwrap();
        assert_eq!(resampled.n_diverged(), 0);
    }

    #[test]
    fn single_particle_propagation() {
        let model = LinearGaussianModel::new(0.9, 1.0, 1.0).unwrap();
        let set = set_of(&[1.0]);
        let mut a = FilterRng::seed_from_u64(4);
        let mut b = FilterRng::seed_from_u64(4);
        let out = propagate(&set, &model, &ParamVector::from([0.9]), 1, &mut a);
        let direct = model
            .sample_transition(&ParamVector::from([0.9]), &StateVector::from([1.0]), 1, &mut b)
            .unwrap();
        assert_eq!(out.particles(), &[direct]);
    }

    #[test]
    fn propagated_mean_matches_transition_moment() {
        let model = LinearGaussianModel::new(0.9, 1.0, 1.0).unwrap();
        let n = 100_000;
        let set = set_of(&vec![1.0; n]);
        let mut rng = FilterRng::seed_from_u64(6);
        let out = propagate(&set, &model, &ParamVector::from([0.9]), 1, &mut rng);
        let mean = out.mean().unwrap()[0];
        assert!((mean - 0.9).abs() < 3.0 * (1.0 / n as f64).sqrt());
    }

    #[test]
    fn likelihood_of_constant_g() {
        let set = set_of(&[2.0, 2.0, 2.0, 2.0]);
        let est = estimate_likelihood(&set, &Identity::new(), &theta0(), &ObsVector::from([0.0]), 1);
        assert!((est.log_u - 2.0).abs() < 1e-14);
    }

    #[test]
    fn likelihood_hand_example() {
        // g = (1, 3) -> (1 + 3) / 2 = 2
        let set = set_of(&[0.0, 3f64.ln()]);
        let est = estimate_likelihood(&set, &Identity::new(), &theta0(), &ObsVector::from([0.0]), 1);
        assert!((est.log_u - 2f64.ln()).abs() < 1e-14);
        let lse = logsumexp(&est.per_particle_log_g) - 2f64.ln();
        assert_eq!(est.log_u, lse);
    }

    #[test]
    fn likelihood_all_diverged() {
        let set = InnerParticleSet::new(vec![StateVector::diverged(1); 3]).unwrap();
        let est = estimate_likelihood(&set, &Identity::new(), &theta0(), &ObsVector::from([0.0]), 1);
        assert_eq!(est.log_u, f64::NEG_INFINITY);
    }

    #[test]
    fn resample_point_mass() {
        let set = set_of(&[7.0, 8.0, 9.0]);
        let mut rng = FilterRng::seed_from_u64(1);
        let out = resample_multinomial(&set, &[0.0, f64::NEG_INFINITY, f64::NEG_INFINITY], &mut rng).unwrap();
        assert!(out.particles().iter().all(|x| x[0] == 7.0));
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn resample_single_particle() {
        let set = set_of(&[7.0]);
        let mut rng = FilterRng::seed_from_u64(1);
        assert_eq!(resample_multinomial(&set, &[-3.0], &mut rng).unwrap(), set);
    }

    #[test]
    fn resample_degenerate_weights() {
        let set = set_of(&[7.0, 8.0]);
        let mut rng = FilterRng::seed_from_u64(1);
        assert_eq!(
            resample_multinomial(&set, &[f64::NEG_INFINITY; 2], &mut rng),
            Err(Error::DegenerateWeights { step: None })
        );
    }

    #[test]
    fn resample_uniform_weights_chi_square() {
        // Pooled counts over 10^4 resamplings of M = 10 are multinomial with equal
        // cell probabilities; 99th percentile of chi^2 with 9 dof is 21.666.
        let m = 10;
        let set = set_of(&(0..m).map(|i| i as f64).collect::<Vec<_>>());
        let mut rng = FilterRng::seed_from_u64(77);
        let mut counts = vec![0u64; m];
        let trials = 10_000;
        for _ in 0..trials {
            let out = resample_multinomial(&set, &vec![0.0; m], &mut rng).unwrap();
            for x in out.particles() {
                counts[x[0] as usize] += 1;
            }
        }
        let expected = (trials * m) as f64 / m as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn zero_observations_returns_prior_sample() {
        let model = LinearGaussianModel::new(0.9, 1.0, 1.0).unwrap();
        let mut rng = FilterRng::seed_from_u64(3);
        let run = run_bootstrap(&model, &ParamVector::from([0.9]), &[], 50, &mut rng).unwrap();
        assert_eq!(run.initial.len(), 50);
        assert!(run.steps.is_empty());
        assert_eq!(run.log_marginal(), 0.0);
    }

    #[test]
    fn bootstrap_reports_degenerate_step() {
        struct Hopeless(SupportBox);
        impl StateSpaceModel for Hopeless {
            fn state_dim(&self) -> usize {
                1
            }
            fn obs_dim(&self) -> usize {
                1
            }
            fn sample_state_prior<R: Rng + ?Sized>(&self, _rng: &mut R) -> StateVector {
                StateVector::from([0.0])
            }
            fn sample_transition<R: Rng + ?Sized>(
                &self,
                _theta: &ParamVector,
                x: &StateVector,
                _t: usize,
                _rng: &mut R,
            ) -> Result<StateVector> {
                Ok(x.clone())
            }
            fn log_likelihood(&self, _: &ParamVector, _: &StateVector, y: &ObsVector, _: usize) -> f64 {
                if y[0] > 0.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
            fn sample_param_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
                self.0.sample_uniform(rng)
            }
            fn support(&self) -> &SupportBox {
                &self.0
            }
        }
        let model = Hopeless(SupportBox::unit(1));
        let obs: Vec<ObsVector> = [0.0, 0.0, 1.0].iter().map(|&y| ObsVector::from([y])).collect();
        let mut rng = FilterRng::seed_from_u64(3);
        let err = run_bootstrap(&model, &theta0(), &obs, 5, &mut rng).unwrap_err();
        assert_eq!(err, Error::DegenerateWeights { step: Some(3) });
    }
}
