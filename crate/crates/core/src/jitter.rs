//! Jittering kernels for the parameter particles.
//!
//! Two families are provided:
//!
//! - [`JitterKernel::MixtureDirac`]: leave the particle untouched with
//!   probability `1 - eps_N`, otherwise redraw it from a base kernel. With
//!   `eps_N = N^{-p/2}` the `p`-th moment of the perturbation decays as
//!   `N^{-p/2}`. Forcing `eps_N = 0` gives the no-jitter kernel.
//! - [`JitterKernel::TruncatedGaussian`]: independent truncated normal moves per
//!   coordinate, centred on the old value, with variance `c_k N^{-(p+2)/2}` and
//!   truncation to the support box. Every particle moves, so jittered
//!   populations are almost surely free of replicas.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use crate::diagnostics::loglog_slope;
use crate::error::{Error, Result};
use crate::model::{ParamVector, SupportBox};

/// How the mixing probability of [`JitterKernel::MixtureDirac`] depends on `N`.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsilonRule {
    /// `eps_N = min(1, N^{-p/2})`.
    Schedule { p: f64 },
    /// `eps_N` fixed, independent of `N`.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum JitterKernel {
    MixtureDirac {
        epsilon: EpsilonRule,
        /// Per-dimension standard deviation of a truncated-normal base kernel.
        /// `None` draws the replacement uniformly over the box.
        base_spread: Option<Vec<f64>>,
        support: SupportBox,
    },
    TruncatedGaussian {
        /// Variance constants `c_k`.
        constants: Vec<f64>,
        /// Target moment order; variances scale as `N^{-(p+2)/2}`.
        p: f64,
        support: SupportBox,
    },
}

impl JitterKernel {
    pub fn truncated_gaussian(constants: Vec<f64>, p: f64, support: SupportBox) -> Result<Self> {
        if constants.len() != support.dim() {
            return Err(Error::Dimension {
                expected: support.dim(),
                got: constants.len(),
            });
        }
        if constants.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::contract("jitter variance constants must be positive"));
        }
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::contract(format!("moment order p must be positive, got {p}")));
        }
        Ok(JitterKernel::TruncatedGaussian { constants, p, support })
    }

    /// Mixture kernel with `eps_N = min(1, N^{-p/2})` and a uniform base kernel.
    pub fn mixture_dirac(p: f64, support: SupportBox) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::contract(format!("moment order p must be positive, got {p}")));
        }
        Ok(JitterKernel::MixtureDirac {
            epsilon: EpsilonRule::Schedule { p },
            base_spread: None,
            support,
        })
    }

    /// Mixture kernel with a fixed mixing probability and a uniform base kernel.
    pub fn mixture_dirac_fixed(epsilon: f64, support: SupportBox) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::contract(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        Ok(JitterKernel::MixtureDirac {
            epsilon: EpsilonRule::Fixed(epsilon),
            base_spread: None,
            support,
        })
    }

    /// The no-jitter kernel: every particle is left where it is.
    pub fn dirac(support: SupportBox) -> Self {
        JitterKernel::MixtureDirac {
            epsilon: EpsilonRule::Fixed(0.0),
            base_spread: None,
            support,
        }
    }

    /// Truncated-Gaussian kernel with constants `(60, 60, 10, 1)` on the Lorenz box, `p = 1`.
    pub fn lorenz_default() -> Self {
        JitterKernel::TruncatedGaussian {
            constants: vec![60.0, 60.0, 10.0, 1.0],
            p: 1.0,
            support: crate::lorenz63::support(),
        }
    }

    pub fn support(&self) -> &SupportBox {
        match self {
            JitterKernel::MixtureDirac { support, .. } | JitterKernel::TruncatedGaussian { support, .. } => support,
        }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(
            self,
            JitterKernel::MixtureDirac {
                epsilon: EpsilonRule::Fixed(e),
                ..
            } if *e == 0.0
        )
    }

    /// Probability that a particle is perturbed at population size `n`.
    pub fn epsilon(&self, n: usize) -> f64 {
        match self {
            JitterKernel::MixtureDirac { epsilon, .. } => match epsilon {
                EpsilonRule::Fixed(e) => *e,
                EpsilonRule::Schedule { p } => (n.max(1) as f64).powf(-p / 2.0).min(1.0),
            },
            JitterKernel::TruncatedGaussian { .. } => 1.0,
        }
    }

    /// Per-dimension variances `c_k N^{-(p+2)/2}` of the truncated-Gaussian kernel.
    pub fn variance_schedule(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::contract("N must be at least 1"));
        }
        match self {
            JitterKernel::TruncatedGaussian { constants, p, .. } => {
                let scale = (n as f64).powf(-(p + 2.0) / 2.0);
                Ok(constants.iter().map(|c| c * scale).collect())
            }
            JitterKernel::MixtureDirac { .. } => Err(Error::contract(
                "variance schedule is defined for the truncated-Gaussian kernel; use epsilon() for the mixture kernel",
            )),
        }
    }

    /// Draw a jittered copy of `anchor` for population size `n`.
    pub fn sample<R: Rng + ?Sized>(&self, anchor: &ParamVector, n: usize, rng: &mut R) -> Result<ParamVector> {
        let support = self.support();
        if !support.contains(anchor)? {
            return Err(Error::contract(format!(
                "jitter anchor {:?} lies outside the support",
                anchor.as_slice()
            )));
        }
        match self {
            JitterKernel::MixtureDirac {
                base_spread, support, ..
            } => {
                let eps = self.epsilon(n);
                if eps == 0.0 || (eps < 1.0 && rng.random::<f64>() >= eps) {
                    return Ok(anchor.clone());
                }
                match base_spread {
                    None => Ok(support.sample_uniform(rng)),
                    Some(spread) => {
                        let coords = (0..support.dim())
                            .map(|k| {
                                let (lo, hi) = support.bounds(k);
                                sample_truncated_normal(anchor[k], spread[k] * spread[k], lo, hi, rng)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok(coords.into())
                    }
                }
            }
            JitterKernel::TruncatedGaussian { .. } => {
                let vars = self.variance_schedule(n)?;
                let coords = vars
                    .iter()
                    .enumerate()
                    .map(|(k, &var)| {
                        let (lo, hi) = support.bounds(k);
                        sample_truncated_normal(anchor[k], var, lo, hi, rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(coords.into())
            }
        }
    }
}

/// Upper tail probability of the standard normal.
#[inline]
fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

#[inline]
fn upper_tail_inv(q: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * q)
}

/// Below this tail mass the inverse CDF loses too much precision.
const TINY_TAIL: f64 = 1e-280;

/// Rejection acceptance rate under which the inverse CDF is used instead.
const MIN_ACCEPTANCE: f64 = 0.01;

fn standard_mass(alpha: f64, beta: f64) -> f64 {
    if alpha >= 0.0 {
        upper_tail(alpha) - upper_tail(beta)
    } else if beta <= 0.0 {
        upper_tail(-beta) - upper_tail(-alpha)
    } else {
        1.0 - upper_tail(beta) - upper_tail(-alpha)
    }
}

/// Standard normal restricted to `(alpha, beta)` with `alpha >= 0`, far in the tail.
fn far_tail<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let lambda = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
    if lambda * (beta - alpha) < 1.0 {
        // narrow window: uniform proposal, density ratio exp((alpha^2 - z^2) / 2)
        loop {
            let z = rng.random_range(alpha..beta);
            if rng.random::<f64>().ln() <= 0.5 * (alpha * alpha - z * z) {
                return z;
            }
        }
    }
    let exp = Exp::new(lambda).expect("lambda is positive");
    loop {
        let z = alpha + exp.sample(rng);
        if z >= beta {
            continue;
        }
        if rng.random::<f64>().ln() <= -0.5 * (z - lambda).powi(2) {
            return z;
        }
    }
}

fn standard_truncated<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    if standard_mass(alpha, beta) >= MIN_ACCEPTANCE {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if alpha < z && z < beta {
                return z;
            }
        }
    }
    if beta <= 0.0 {
        return -standard_truncated(-beta, -alpha, rng);
    }
    if alpha >= 0.0 {
        let q_hi = upper_tail(alpha);
        if q_hi < TINY_TAIL {
            return far_tail(alpha, beta, rng);
        }
        let q_lo = upper_tail(beta);
        let u = q_lo + (q_hi - q_lo) * rng.random::<f64>();
        return upper_tail_inv(u).clamp(alpha, beta);
    }
    // window straddling zero but narrow
    let lo = 1.0 - upper_tail(alpha);
    let hi = 1.0 - upper_tail(beta);
    let u = lo + (hi - lo) * rng.random::<f64>();
    (-upper_tail_inv(u)).clamp(alpha, beta)
}

/// Draw from `N(mean, var)` truncated to `(lo, hi)`.
///
/// Plain rejection from the untruncated normal while its acceptance rate is at
/// least 1%, inverse CDF below that, and an exponential-proposal rejection
/// sampler when the tail mass underflows.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, var: f64, lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::contract(format!(
            "truncated normal variance must be positive, got {var}"
        )));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || !mean.is_finite() {
        return Err(Error::contract(format!(
            "truncated normal needs finite mean and lo < hi, got mean={mean}, ({lo}, {hi})"
        )));
    }
    let sd = var.sqrt();
    let alpha = (lo - mean) / sd;
    let beta = (hi - mean) / sd;
    for _ in 0..64 {
        let x = mean + sd * standard_truncated(alpha, beta, rng);
        if lo < x && x < hi {
            return Ok(x);
        }
    }
    // rounding kept landing on a bound; fall back to the nearest interior float
    let x = mean + sd * standard_truncated(alpha, beta, rng);
    Ok(x.clamp(lo.next_up(), hi.next_down()))
}

/// Monte Carlo estimate of the jitter moment at one population size.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPoint {
    pub n: usize,
    /// `sup` over anchors of the estimated `E ||theta - anchor||^p`.
    pub sup_moment: f64,
    /// `(sup_moment * N^{p/2})^{1/p}`: the smallest `c` with `sup_moment <= c^p / N^{p/2}`.
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub p: f64,
    pub points: Vec<MomentPoint>,
    /// Largest per-`N` constant: the bound holds at every tested `N` with this value.
    pub c_kappa: f64,
    /// Least-squares slope of `log sup_moment` against `log N`; `None` when a moment is zero.
    pub slope: Option<f64>,
    /// Per-`N` constants agree within a factor of two.
    pub stable: bool,
}

/// Estimate `sup_{anchor} E ||theta - anchor||^p` for each `N` over a grid of
/// anchors (three points per axis, corners included).
pub fn check_moment_bound<R: Rng + ?Sized>(
    kernel: &JitterKernel,
    n_values: &[usize],
    p: f64,
    trials: usize,
    rng: &mut R,
) -> Result<MomentReport> {
    if trials < 1000 {
        return Err(Error::contract(format!(
            "need at least 1000 trials per anchor, got {trials}"
        )));
    }
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::contract("N values must be non-empty and positive"));
    }
    let anchors = kernel.support().grid(3);
    let mut points = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut sup = 0.0_f64;
        for anchor in &anchors {
            let mut acc = 0.0;
            for _ in 0..trials {
                let theta = kernel.sample(anchor, n, rng)?;
                let dist = theta
                    .iter()
                    .zip(anchor.iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                acc += dist.powf(p);
            }
            sup = sup.max(acc / trials as f64);
        }
        points.push(MomentPoint {
            n,
            sup_moment: sup,
            constant: (sup * (n as f64).powf(p / 2.0)).powf(1.0 / p),
        });
    }
    let c_kappa = points.iter().map(|pt| pt.constant).fold(0.0, f64::max);
    let c_min = points.iter().map(|pt| pt.constant).fold(f64::INFINITY, f64::min);
    let stable = c_kappa == 0.0 || (c_min > 0.0 && c_kappa / c_min <= 2.0);
    let slope = if points.iter().all(|pt| pt.sup_moment > 0.0) && points.len() >= 2 {
        loglog_slope(&points.iter().map(|pt| (pt.n as f64, pt.sup_moment)).collect::<Vec<_>>())
    } else {
        None
    };
    Ok(MomentReport {
        p,
        points,
        c_kappa,
        slope,
        stable,
    })
}
