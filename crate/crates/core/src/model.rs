//! State-space model contract.
//!
//! A model supplies the state prior, a parameter-indexed transition sampler,
//! the observation log-likelihood, the parameter prior and the compact box the
//! parameters live in. Implementations must be immutable after construction so
//! that the filters can call them from many threads at once.

use std::ops::Deref;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::gaussian_log_density;

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(coords: Vec<f64>) -> Self {
                Self(coords)
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|c| c.is_finite())
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl<const D: usize> From<[f64; D]> for $name {
            fn from(v: [f64; D]) -> Self {
                Self(v.to_vec())
            }
        }
    };
}

real_vector!(
    /// A point in the parameter box.
    ParamVector
);
real_vector!(
    /// A point of the hidden state space.
    ///
    /// Predicted particle sets may contain the [`StateVector::diverged`]
    /// sentinel; filtered sets never do.
    StateVector
);
real_vector!(
    /// One observation.
    ObsVector
);

impl StateVector {
    /// Marker for a particle whose transition blew up. Its likelihood is `-inf`.
    pub fn diverged(dim: usize) -> Self {
        Self(vec![f64::NAN; dim])
    }
}

/// Axis-aligned compact parameter support `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SupportBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::contract("support box must have at least one dimension"));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::contract(format!(
                    "support box dimension {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit hypercube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn bounds(&self, k: usize) -> (f64, f64) {
        (self.lower[k], self.upper[k])
    }

    /// Closed-interval membership test, boundaries included.
    pub fn contains(&self, theta: &ParamVector) -> Result<bool> {
        if theta.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: theta.dim(),
            });
        }
        Ok(theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| lo <= x && x <= hi))
    }

    pub fn midpoint(&self) -> ParamVector {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect::<Vec<_>>()
            .into()
    }

    /// Euclidean diameter, `sup ||a - b||` over the box.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Uniform draw from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| rng.random_range(lo..hi))
            .collect::<Vec<_>>()
            .into()
    }

    /// Anchors on a regular grid with `per_dim` points per axis, boundaries included.
    pub fn grid(&self, per_dim: usize) -> Vec<ParamVector> {
        let per_dim = per_dim.max(1);
        let d = self.dim();
        let total = per_dim.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                let coords = (0..d)
                    .map(|k| {
                        let j = idx % per_dim;
                        idx /= per_dim;
                        let (lo, hi) = self.bounds(k);
                        if per_dim == 1 {
                            0.5 * (lo + hi)
                        } else {
                            lo + (hi - lo) * j as f64 / (per_dim - 1) as f64
                        }
                    })
                    .collect::<Vec<_>>();
                ParamVector::new(coords)
            })
            .collect()
    }
}

/// Behavioural contract consumed by every filter.
///
/// The time index `t` is passed explicitly so time-inhomogeneous kernels can be
/// expressed. Log-likelihoods are finite or `-inf`, never NaN.
pub trait StateSpaceModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn obs_dim(&self) -> usize;

    fn param_dim(&self) -> usize {
        self.support().dim()
    }

    fn sample_state_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector;

    /// Draw from the transition kernel. A trajectory that leaves the numerically
    /// safe region yields [`Error::Divergence`].
    fn sample_transition<R: Rng + ?Sized>(
        &self,
        theta: &ParamVector,
        x_prev: &StateVector,
        t: usize,
        rng: &mut R,
    ) -> Result<StateVector>;

    fn log_likelihood(&self, theta: &ParamVector, x: &StateVector, y: &ObsVector, t: usize) -> f64;

    fn sample_param_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector;

    fn support(&self) -> &SupportBox;
}

/// Scalar linear-Gaussian model with unknown autoregressive coefficient.
///
/// `x_t = a x_{t-1} + u_t`, `u_t ~ N(0, q)`, `y_t = x_t + v_t`, `v_t ~ N(0, r)`,
/// `x_0 ~ N(m0, p0)`, with `theta = (a)`. Exact filtering is available through
/// [`crate::kalman`], which makes it the reference model for every Monte Carlo
/// check in this crate.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    a: f64,
    q: f64,
    r: f64,
    m0: f64,
    p0: f64,
    support: SupportBox,
    fixed_param: bool,
}

impl LinearGaussianModel {
    /// Model with true coefficient `a`, prior `a ~ U(-1, 1)` and `x_0 ~ N(0, 1)`.
    pub fn new(a: f64, q: f64, r: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) || !(r > 0.0 && r.is_finite()) {
            return Err(Error::contract(format!(
                "linear-Gaussian variances must be positive, got q={q}, r={r}"
            )));
        }
        if !a.is_finite() {
            return Err(Error::contract("coefficient must be finite"));
        }
        Ok(Self {
            a,
            q,
            r,
            m0: 0.0,
            p0: 1.0,
            support: SupportBox::new(vec![-1.0], vec![1.0])?,
            fixed_param: false,
        })
    }

    pub fn with_support(mut self, lower: f64, upper: f64) -> Result<Self> {
        self.support = SupportBox::new(vec![lower], vec![upper])?;
        Ok(self)
    }

    pub fn with_state_prior(mut self, m0: f64, p0: f64) -> Result<Self> {
        if !(p0 > 0.0) {
            return Err(Error::contract(format!("prior variance must be positive, got {p0}")));
        }
        self.m0 = m0;
        self.p0 = p0;
        Ok(self)
    }

    /// Make the parameter prior a point mass at the true coefficient.
    pub fn with_fixed_param(mut self) -> Self {
        self.fixed_param = true;
        self
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn true_param(&self) -> ParamVector {
        ParamVector::from([self.a])
    }

    /// Simulate `n_obs` steps under the true coefficient. Returns `(states, observations)`
    /// where `states[0]` is `x_0` and `observations[t - 1]` is `y_t`.
    pub fn simulate<R: Rng + ?Sized>(&self, n_obs: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mut states = Vec::with_capacity(n_obs + 1);
        let mut obs = Vec::with_capacity(n_obs);
        let mut x = self.m0 + self.p0.sqrt() * rng.sample::<f64, _>(StandardNormal);
        states.push(x);
        for _ in 0..n_obs {
            x = self.a * x + self.q.sqrt() * rng.sample::<f64, _>(StandardNormal);
            states.push(x);
            obs.push(x + self.r.sqrt() * rng.sample::<f64, _>(StandardNormal));
        }
        (states, obs)
    }
}

impl StateSpaceModel for LinearGaussianModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn sample_state_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector {
        let z: f64 = StandardNormal.sample(rng);
        StateVector::from([self.m0 + self.p0.sqrt() * z])
    }

    fn sample_transition<R: Rng + ?Sized>(
        &self,
        theta: &ParamVector,
        x_prev: &StateVector,
        t: usize,
        rng: &mut R,
    ) -> Result<StateVector> {
        let z: f64 = StandardNormal.sample(rng);
        let x = theta[0] * x_prev[0] + self.q.sqrt() * z;
        if x.is_finite() {
            Ok(StateVector::from([x]))
        } else {
            Err(Error::Divergence { step: t })
        }
    }

    fn log_likelihood(&self, _theta: &ParamVector, x: &StateVector, y: &ObsVector, _t: usize) -> f64 {
        let ll = gaussian_log_density(y[0], x[0], self.r);
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    }

    fn sample_param_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        if self.fixed_param {
            self.true_param()
        } else {
            self.support.sample_uniform(rng)
        }
    }

    fn support(&self) -> &SupportBox {
        &self.support
    }
}

/// Scalar model whose likelihood is confined to `[1/g, g]`.
///
/// `x_t = 0.8 x_{t-1} + N(0, 1)`, `x_0 ~ N(0, 1)`, `theta` in `[0, 1]` and
/// `log g(y | x, theta) = log(g) (2 exp(-(y - theta x)^2 / 2) - 1)`. The density
/// is unnormalised, which only shifts every log-weight by the same constant.
#[derive(Debug, Clone)]
pub struct BoundedLikelihoodModel {
    g_bound: f64,
    true_theta: f64,
    support: SupportBox,
}

impl BoundedLikelihoodModel {
    pub fn new(g_bound: f64, true_theta: f64) -> Result<Self> {
        if !(g_bound >= 1.0 && g_bound.is_finite()) {
            return Err(Error::contract(format!("likelihood bound must be >= 1, got {g_bound}")));
        }
        let support = SupportBox::unit(1);
        if !support.contains(&ParamVector::from([true_theta]))? {
            return Err(Error::contract("true theta must lie in [0, 1]"));
        }
        Ok(Self {
            g_bound,
            true_theta,
            support,
        })
    }

    pub fn g_bound(&self) -> f64 {
        self.g_bound
    }

    /// Observations `y_t = theta x_t + N(0, 1)` under the true parameter.
    pub fn simulate<R: Rng + ?Sized>(&self, n_obs: usize, rng: &mut R) -> Vec<ObsVector> {
        let mut x: f64 = StandardNormal.sample(rng);
        (0..n_obs)
            .map(|_| {
                let u: f64 = StandardNormal.sample(rng);
                let v: f64 = StandardNormal.sample(rng);
                x = 0.8 * x + u;
                ObsVector::from([self.true_theta * x + v])
            })
            .collect()
    }
}

impl StateSpaceModel for BoundedLikelihoodModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn sample_state_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector {
        StateVector::from([StandardNormal.sample(rng)])
    }

    fn sample_transition<R: Rng + ?Sized>(
        &self,
        _theta: &ParamVector,
        x_prev: &StateVector,
        _t: usize,
        rng: &mut R,
    ) -> Result<StateVector> {
        let z: f64 = StandardNormal.sample(rng);
        Ok(StateVector::from([0.8 * x_prev[0] + z]))
    }

    fn log_likelihood(&self, theta: &ParamVector, x: &StateVector, y: &ObsVector, _t: usize) -> f64 {
        let d = y[0] - theta[0] * x[0];
        let ll = self.g_bound.ln() * (2.0 * (-0.5 * d * d).exp() - 1.0);
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
