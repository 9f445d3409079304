//! Structural properties of the nested filter.

use npf_core::inner_filter::run_bootstrap;
use npf_core::kalman::{kalman_filter, log_marginal};
use npf_core::math::normalize_log_weights;
use npf_core::{
    lorenz63, FilterRng, JitterKernel, LinearGaussianModel, LorenzConfig, LorenzModel, NestedFilter, NestedSystem,
    ObsVector, ParamVector, Result, StateSpaceModel, StateVector, SupportBox,
};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

fn lg_obs(model: &LinearGaussianModel, n: usize, seed: u64) -> (Vec<f64>, Vec<ObsVector>) {
    let mut rng = FilterRng::seed_from_u64(seed);
    let (_, y) = model.simulate(n, &mut rng);
    let obs = y.iter().map(|&v| ObsVector::from([v])).collect();
    (y, obs)
}

#[test]
fn lorenz_particles_never_leave_the_box() {
    let model = LorenzModel::new(LorenzConfig::default()).unwrap();
    let mut rng = FilterRng::seed_from_u64(3);
    let truth = lorenz63::simulate_truth(
        &LorenzConfig::default(),
        &ParamVector::from(lorenz63::TRUE_PARAMS),
        40 * 30,
        &mut rng,
    )
    .unwrap();
    let mut filter = NestedFilter::new(&model, JitterKernel::lorenz_default(), 30, 20, 11).unwrap();
    let support = model.support().clone();
    for y in &truth.observations {
        let out = filter.step(y).unwrap();
        for theta in &out.mu_hat {
            assert!(support.contains(theta).unwrap(), "{theta:?}");
        }
        assert!(support.contains(&ParamVector::new(out.param_mean.clone())).unwrap());
    }
}

#[test]
fn boundary_truth_keeps_particles_inside_for_every_kernel() {
    let model = LinearGaussianModel::new(0.99, 1.0, 1.0).unwrap();
    let (_, obs) = lg_obs(&model, 60, 4);
    let support = model.support().clone();
    let kernels = [
        JitterKernel::truncated_gaussian(vec![1.0], 1.0, support.clone()).unwrap(),
        JitterKernel::mixture_dirac(1.0, support.clone()).unwrap(),
        JitterKernel::dirac(support.clone()),
    ];
    for kernel in kernels {
        let mut filter = NestedFilter::new(&model, kernel, 40, 10, 5).unwrap();
        for out in filter.run(&obs).unwrap() {
            assert!(out.mu_hat.iter().all(|th| support.contains(th).unwrap()));
        }
    }
}

#[test]
fn outer_weights_are_a_distribution_and_ancestors_in_range() {
    let model = LinearGaussianModel::new(0.7, 1.0, 0.5).unwrap();
    let (_, obs) = lg_obs(&model, 40, 6);
    let kernel = JitterKernel::truncated_gaussian(vec![1.0], 1.0, model.support().clone()).unwrap();
    let mut filter = NestedFilter::new(&model, kernel, 64, 16, 7).unwrap();
    for out in filter.run(&obs).unwrap() {
        let w = normalize_log_weights(&out.per_theta_log_u).unwrap();
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(out.ancestors.len(), 64);
        assert!(out.ancestors.iter().all(|&a| a < 64));
        assert!((1.0 / 64.0 - 1e-12..=1.0 + 1e-12).contains(&out.ness.ness));
    }
}

/// The state is a noisy copy of the parameter, so every inner particle
/// remembers which parameter produced it.
struct EchoModel {
    support: SupportBox,
}

impl StateSpaceModel for EchoModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn sample_state_prior<R: Rng + ?Sized>(&self, _rng: &mut R) -> StateVector {
        StateVector::from([0.0, 0.0])
    }

    fn sample_transition<R: Rng + ?Sized>(
        &self,
        theta: &ParamVector,
        _x_prev: &StateVector,
        _t: usize,
        rng: &mut R,
    ) -> Result<StateVector> {
        let z: f64 = StandardNormal.sample(rng);
        Ok(StateVector::from([theta[0], z]))
    }

    fn log_likelihood(&self, _theta: &ParamVector, x: &StateVector, y: &ObsVector, _t: usize) -> f64 {
        -0.5 * (y[0] - x[0] - 0.1 * x[1]).powi(2)
    }

    fn sample_param_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        self.support.sample_uniform(rng)
    }

    fn support(&self) -> &SupportBox {
        &self.support
    }
}

#[test]
fn parameters_and_inner_sets_move_together() {
    let model = EchoModel {
        support: SupportBox::new(vec![-2.0], vec![2.0]).unwrap(),
    };
    let kernel = JitterKernel::truncated_gaussian(vec![0.5], 1.0, model.support().clone()).unwrap();
    let mut filter = NestedFilter::new(&model, kernel, 50, 8, 8).unwrap();
    for t in 0..30 {
        let y = ObsVector::from([0.3 + 0.01 * t as f64]);
        filter.step(&y).unwrap();
        for p in filter.system().particles() {
            for x in p.inner.particles() {
                assert_eq!(x[0].to_bits(), p.theta[0].to_bits());
            }
        }
    }
}

#[test]
fn dirac_kernel_with_known_parameter_is_a_bootstrap_filter() {
    let model = LinearGaussianModel::new(0.8, 1.0, 1.0).unwrap().with_fixed_param();
    let theta = model.true_param();
    let (y, obs) = lg_obs(&model, 25, 12);
    let exact = log_marginal(&kalman_filter(
        model.a(),
        model.q(),
        model.r(),
        model.m0(),
        model.p0(),
        &y,
    ));
    let reps = 50u64;
    let mut nested = Vec::new();
    let mut bootstrap = Vec::new();
    for s in 0..reps {
        let mut filter =
            NestedFilter::new(&model, JitterKernel::dirac(model.support().clone()), 1, 50, 100 + s).unwrap();
        let outs = filter.run(&obs).unwrap();
        assert!(outs.iter().all(|o| o.mu_hat[0] == theta));
        nested.push(outs.iter().map(|o| o.per_theta_log_u[0]).sum::<f64>());
        let mut rng = FilterRng::seed_from_u64(500 + s);
        bootstrap.push(
            run_bootstrap(&model, &theta, &obs, 50, &mut rng)
                .unwrap()
                .log_marginal(),
        );
    }
    let stats = |v: &[f64]| {
        let mu = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (mu, var)
    };
    let (mu_n, var_n) = stats(&nested);
    let (mu_b, var_b) = stats(&bootstrap);
    let se = ((var_n + var_b) / reps as f64).sqrt();
    assert!((mu_n - mu_b).abs() < 3.0 * se, "{mu_n} vs {mu_b} (se {se})");
    // both estimate the same quantity the Kalman filter computes exactly
    assert!((mu_b - exact).abs() < 1.0, "{mu_b} vs exact {exact}");
}

#[test]
fn initial_parameter_sample_is_uniform_on_the_box() {
    let model = LorenzModel::new(LorenzConfig::default()).unwrap();
    let mut rng = FilterRng::seed_from_u64(13);
    let n = 10_000;
    let system = NestedSystem::initialize(&model, n, 1, &mut rng).unwrap();
    let support = model.support();
    let mid = support.midpoint();
    for k in 0..support.dim() {
        let (lo, hi) = support.bounds(k);
        let mean = system.estimate_param(|th| th[k]);
        let se = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - mid[k]).abs() < 4.0 * se, "dim {k}: {mean} vs {}", mid[k]);
        let below = system.estimate_param(|th| if th[k] < mid[k] { 1.0 } else { 0.0 });
        assert!((below - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "dim {k}: {below}");
    }
    assert!(system.particles().iter().all(|p| p.inner.len() == 1));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let model = LorenzModel::new(LorenzConfig::default()).unwrap();
    let mut rng = FilterRng::seed_from_u64(21);
    let truth = lorenz63::simulate_truth(
        &LorenzConfig::default(),
        &ParamVector::from(lorenz63::TRUE_PARAMS),
        40 * 8,
        &mut rng,
    )
    .unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut filter = NestedFilter::new(&model, JitterKernel::lorenz_default(), 24, 12, 99).unwrap();
            let mut csv = Vec::new();
            for out in filter.run(&truth.observations).unwrap() {
                out.write_csv_row(&mut csv).unwrap();
            }
            csv
        })
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(4));
}

/// `E[x_T | y_{1:T}]` with `a` integrated against its posterior on a fine grid.
fn grid_posterior_state_mean(model: &LinearGaussianModel, y: &[f64]) -> f64 {
    let (lo, hi) = model.support().bounds(0);
    let k = 2001;
    let mut log_w = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    for i in 0..k {
        let a = lo + (hi - lo) * i as f64 / (k - 1) as f64;
        let steps = kalman_filter(a, model.q(), model.r(), model.m0(), model.p0(), y);
        log_w.push(log_marginal(&steps));
        means.push(steps.last().unwrap().mean);
    }
    let w = normalize_log_weights(&log_w).unwrap();
    w.iter().zip(&means).map(|(w, m)| w * m).sum()
}

#[test]
fn joint_estimate_matches_parameter_averaged_kalman_mean() {
    let model = LinearGaussianModel::new(0.6, 1.0, 0.5).unwrap();
    for seed in 0..3u64 {
        let (y, obs) = lg_obs(&model, 30, 600 + seed);
        let exact = grid_posterior_state_mean(&model, &y);
        let kernel = JitterKernel::truncated_gaussian(vec![1.0], 1.0, model.support().clone()).unwrap();
        let mut filter = NestedFilter::new(&model, kernel, 400, 400, 31 + seed).unwrap();
        let out = filter.run(&obs).unwrap();
        let post = filter.system().estimate_joint(|_, x| x[0]);
        let weighted = out.last().unwrap().joint_state_mean[0];
        assert!((post - exact).abs() < 0.1, "seed {seed}: {post} vs {exact}");
        assert!((weighted - exact).abs() < 0.1, "seed {seed}: {weighted} vs {exact}");
    }
}
