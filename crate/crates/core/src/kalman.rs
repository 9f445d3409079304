//! Exact Kalman recursion for [`LinearGaussianModel`](crate::model::LinearGaussianModel).
//!
//! This is the reference against which the particle filters are checked, so it
//! shares no code with them.

/// Filtered moments and the one-step predictive log-density of `y_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanStep {
    pub mean: f64,
    pub var: f64,
    pub log_predictive: f64,
}

/// Scalar Kalman filter for `x_t = a x_{t-1} + N(0, q)`, `y_t = x_t + N(0, r)`,
/// `x_0 ~ N(m0, p0)`.
pub fn kalman_filter(a: f64, q: f64, r: f64, m0: f64, p0: f64, observations: &[f64]) -> Vec<KalmanStep> {
    let mut m = m0;
    let mut p = p0;
    observations
        .iter()
        .map(|&y| {
            let m_pred = a * m;
            let p_pred = a * a * p + q;
            let s = p_pred + r;
            let innov = y - m_pred;
            let log_predictive = -0.5 * (std::f64::consts::TAU * s).ln() - innov * innov / (2.0 * s);
            let gain = p_pred / s;
            m = m_pred + gain * innov;
            p = (1.0 - gain) * p_pred;
            KalmanStep {
                mean: m,
                var: p,
                log_predictive,
            }
        })
        .collect()
}

/// `log p(y_{1:T})` from the prediction-error decomposition.
pub fn log_marginal(steps: &[KalmanStep]) -> f64 {
    steps.iter().map(|s| s.log_predictive).sum()
}
