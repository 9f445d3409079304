//! Effective sample size with replica counting, error metrics and rate fits.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::ParamVector;

/// Effective sample size of one weighted outer population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NessRecord {
    /// Normalised effective sample size in `[1/N, 1]`.
    pub ness: f64,
    /// Number of distinct parameter particles.
    pub n_distinct: usize,
    /// Largest number of copies of a single distinct particle.
    pub max_replicas: usize,
    pub n_particles: usize,
}

/// Least-squares fit of `e(N) = c / sqrt(N)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub c_hat: f64,
    /// Sum of squared residuals.
    pub residual: f64,
}

/// Group index of every particle (first-occurrence order) and the group sizes.
/// Particles are identical when every coordinate is bit-identical.
fn group_by_bits(thetas: &[ParamVector]) -> (Vec<usize>, Vec<usize>) {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(thetas.len());
    let mut counts = Vec::new();
    let membership = thetas
        .iter()
        .map(|th| {
            let key: Vec<u64> = th.iter().map(|c| c.to_bits()).collect();
            let next = counts.len();
            let g = *index.entry(key).or_insert(next);
            if g == next {
                counts.push(0);
            }
            counts[g] += 1;
            g
        })
        .collect();
    (membership, counts)
}

/// Number of distinct particles and the replica count of each, in order of first appearance.
pub fn count_distinct(thetas: &[ParamVector]) -> (usize, Vec<usize>) {
    let (_, counts) = group_by_bits(thetas);
    (counts.len(), counts)
}

/// Replica-aware normalised effective sample size.
///
/// `NESS = (sum_j u_j)^2 / (N sum_i U_i^2)` where `U_i` is the total likelihood
/// carried by the `i`-th distinct particle (its replica count times its
/// likelihood when the copies agree). Likelihoods are rescaled by their maximum
/// before exponentiation.
pub fn compute_ness(thetas: &[ParamVector], log_u: &[f64]) -> Result<NessRecord> {
    if thetas.len() != log_u.len() {
        return Err(Error::Dimension {
            expected: thetas.len(),
            got: log_u.len(),
        });
    }
    let n = thetas.len();
    let max = log_u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights { step: None });
    }
    let (membership, counts) = group_by_bits(thetas);
    let mut group_mass = vec![0.0; counts.len()];
    let mut total = 0.0;
    for (&g, &lu) in membership.iter().zip(log_u) {
        let u = (lu - max).exp();
        group_mass[g] += u;
        total += u;
    }
    let sq: f64 = group_mass.iter().map(|m| m * m).sum();
    let ness = (total * total) / (n as f64 * sq);
    Ok(NessRecord {
        ness,
        n_distinct: counts.len(),
        max_replicas: counts.iter().copied().max().unwrap_or(0),
        n_particles: n,
    })
}

/// Which lower bound applies to a NESS history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NessRegime {
    /// Every step had `N` distinct particles: bound `1 / ||g||^4`.
    AllDistinct,
    /// Every step had at least `N - sqrt(N) + 1` distinct particles: bound `1 / (2 ||g||^4)`.
    NearlyDistinct,
    /// Too many replicas for any uniform bound.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NessBoundReport {
    pub min_ness: f64,
    /// Step index (1-based) where the minimum occurred.
    pub argmin: usize,
    pub regime: NessRegime,
    pub bound: Option<f64>,
    /// The minimum respects the applicable bound (vacuously true when none applies).
    pub holds: bool,
}

/// Check a NESS history against the lower bound implied by likelihoods in `[1/g, g]`.
pub fn check_ness_bound(history: &[NessRecord], g_bound: f64) -> Result<NessBoundReport> {
    if history.is_empty() {
        return Err(Error::contract("empty NESS history"));
    }
    if !(g_bound >= 1.0) {
        return Err(Error::contract(format!("likelihood bound must be >= 1, got {g_bound}")));
    }
    let (argmin, min_ness) = history
        .iter()
        .enumerate()
        .map(|(i, r)| (i + 1, r.ness))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let all_distinct = history.iter().all(|r| r.n_distinct == r.n_particles);
    let nearly = history
        .iter()
        .all(|r| r.n_distinct as f64 >= r.n_particles as f64 - (r.n_particles as f64).sqrt() + 1.0);
    let g4 = g_bound.powi(4);
    let (regime, bound) = if all_distinct {
        (NessRegime::AllDistinct, Some(1.0 / g4))
    } else if nearly {
        (NessRegime::NearlyDistinct, Some(1.0 / (2.0 * g4)))
    } else {
        (NessRegime::Unbounded, None)
    };
    // the bound is attained with equality for constant likelihoods
    let holds = bound.is_none_or(|b| min_ness >= b * (1.0 - 1e-12));
    Ok(NessBoundReport {
        min_ness,
        argmin,
        regime,
        bound,
        holds,
    })
}

/// `|estimate - truth| / |truth|`.
pub fn normalized_abs_error(estimate: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::contract("normalised error undefined for a zero true value"));
    }
    Ok((estimate - truth).abs() / truth.abs())
}

/// Closed-form least squares for `e(N) = c / sqrt(N)`:
/// `c = sum(e_k / sqrt(N_k)) / sum(1 / N_k)`.
pub fn fit_inverse_sqrt_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.is_empty() {
        return Err(Error::contract("rate fit needs at least one point"));
    }
    for &(n, e) in points {
        if !(n >= 1.0) || !(e >= 0.0) || !e.is_finite() {
            return Err(Error::contract(format!(
                "rate fit needs N >= 1 and finite e >= 0, got ({n}, {e})"
            )));
        }
    }
    let num: f64 = points.iter().map(|&(n, e)| e / n.sqrt()).sum();
    let den: f64 = points.iter().map(|&(n, _)| 1.0 / n).sum();
    let c_hat = num / den;
    let residual = points.iter().map(|&(n, e)| (e - c_hat / n.sqrt()).powi(2)).sum();
    Ok(RateFit { c_hat, residual })
}

/// Least-squares slope of `log y` against `log x`. `None` unless there are two
/// distinct positive abscissae and every ordinate is positive.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}
