//! Monte Carlo rates and weight-degeneracy floors.

use npf_core::diagnostics::{check_ness_bound, NessRegime};
use npf_core::{
    BoundedLikelihoodModel, FilterRng, JitterKernel, LinearGaussianModel, NessRecord, NestedFilter, ObsVector,
    StateSpaceModel,
};
use rand::SeedableRng;

const SEEDS: u64 = 20;

fn lg_model() -> LinearGaussianModel {
    LinearGaussianModel::new(0.9, 1.0, 1.0).unwrap()
}

fn lg_kernel(model: &LinearGaussianModel) -> JitterKernel {
    JitterKernel::truncated_gaussian(vec![1.0], 1.0, model.support().clone()).unwrap()
}

/// Mean final `|a_hat - a|` over `SEEDS` data sets. Data seed `s` is shared by
/// every `(n, m)` so that comparisons are paired.
fn mean_final_error(n: usize, m: usize, steps: usize) -> f64 {
    let model = lg_model();
    let total: f64 = (0..SEEDS)
        .map(|s| {
            let mut rng = FilterRng::seed_from_u64(2000 + s);
            let (_, y) = model.simulate(steps, &mut rng);
            let obs: Vec<ObsVector> = y.iter().map(|&v| ObsVector::from([v])).collect();
            let mut filter = NestedFilter::new(&model, lg_kernel(&model), n, m, 3000 + s).unwrap();
            let out = filter.run(&obs).unwrap();
            (out.last().unwrap().param_mean[0] - model.a()).abs()
        })
        .sum();
    total / SEEDS as f64
}

#[test]
fn parameter_error_shrinks_with_particle_count() {
    let errs: Vec<f64> = [50, 100, 200].iter().map(|&n| mean_final_error(n, n, 100)).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn balanced_split_beats_starved_outer_layer() {
    for k in [400usize, 1600] {
        let root = (k as f64).sqrt() as usize;
        let balanced = mean_final_error(root, root, 100);
        let few_params = mean_final_error(4, k / 4, 100);
        assert!(balanced <= few_params, "K={k}: {balanced} vs {few_params}");
    }
}

// With q = r = 1 four inner particles already give a usable likelihood
// estimate, and spending the budget on parameters wins.
#[test]
#[ignore = "the (K/4, 4) split outperforms the balanced one on this model"]
fn balanced_split_beats_starved_inner_layer() {
    for k in [400usize, 1600] {
        let root = (k as f64).sqrt() as usize;
        let balanced = mean_final_error(root, root, 100);
        let few_states = mean_final_error(k / 4, 4, 100);
        assert!(balanced <= few_states, "K={k}: {balanced} vs {few_states}");
    }
}

fn ness_history(kernel_of: impl Fn(&BoundedLikelihoodModel) -> JitterKernel, seed: u64) -> Vec<NessRecord> {
    let model = BoundedLikelihoodModel::new(2.0, 0.6).unwrap();
    let mut rng = FilterRng::seed_from_u64(seed);
    let obs = model.simulate(500, &mut rng);
    let mut filter = NestedFilter::new(&model, kernel_of(&model), 100, 20, seed + 1).unwrap();
    filter.run(&obs).unwrap().into_iter().map(|o| o.ness).collect()
}

#[test]
fn jittered_ness_stays_above_the_likelihood_floor() {
    let history = ness_history(
        |m| JitterKernel::truncated_gaussian(vec![1.0], 1.0, m.support().clone()).unwrap(),
        40,
    );
    let report = check_ness_bound(&history, 2.0).unwrap();
    assert_eq!(report.regime, NessRegime::AllDistinct);
    assert!(report.holds);
    assert!(report.min_ness > 1.0 / 16.0, "{}", report.min_ness);
}

#[test]
fn unjittered_parameters_coalesce() {
    let history = ness_history(|m| JitterKernel::dirac(m.support().clone()), 50);
    let collapsed = history.iter().position(|r| r.n_distinct == 1).expect("never collapsed");
    assert!((history[collapsed].ness - 0.01).abs() < 1e-12);
    assert!(history[collapsed..].iter().all(|r| r.n_distinct == 1));
    let model = BoundedLikelihoodModel::new(2.0, 0.6).unwrap();
    assert_eq!(model.param_dim(), 1);
}
