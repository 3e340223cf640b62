mod common;

use proptest::prelude::*;
use rand::Rng;
use treefuse::data::{Role, VariableKind};
use treefuse::tree::{
    apply_stop_rule, bonferroni_threshold, coefficient_paths, cv_fold_assignment, fit_model, fit_path, forward_step,
    FitContext, FitOptions,
};
use treefuse::{Dataset, Execution, Family, StopRule};

use common::*;

/// Nominal k=6 with two latent groups {1,3,5} and {2,4,6}.
fn two_group_nominal(seed: u64) -> Dataset {
    let mut r = rng(seed);
    let n = 180;
    let z = codes_covering(&mut r, n, 6);
    let y: Vec<f64> = z.iter().map(|&c| if c % 2 == 0 { 1.5 } else { 0.0 } + 0.5 * normal(&mut r)).collect();
    Dataset::new("y", Family::Gaussian, y, vec![categorical("z", true, 6, Role::Tree, z)]).unwrap()
}

#[test]
fn nominal_first_split_separates_latent_groups() {
    let d = two_group_nominal(1);
    let model = fit_model(&d, &FitOptions::default(), StopRule::PValue { alpha: 0.05 }).unwrap();
    assert_eq!(model.n_splits, 1);
    let cs = model.cluster("z").unwrap();
    let cells: Vec<Vec<u32>> = cs.cells.iter().map(|c| c.levels.clone()).collect();
    assert_eq!(cells, vec![vec![1, 3, 5], vec![2, 4, 6]]);
    assert!((cs.cells[1].effect - 1.5).abs() < 0.2);
}

#[test]
fn step_function_is_recovered_for_ordinal_predictor() {
    let mut r = rng(2);
    let n = 400;
    let z = codes_covering(&mut r, n, 7);
    let truth = [0.0, 0.0, 0.0, 1.0, 1.0, 2.5, 2.5];
    let y: Vec<f64> = z.iter().map(|&c| truth[c as usize - 1] + 0.4 * normal(&mut r)).collect();
    let d = Dataset::new("y", Family::Gaussian, y, vec![categorical("z", false, 7, Role::Tree, z)]).unwrap();
    let model = fit_model(&d, &FitOptions::default(), StopRule::PValue { alpha: 0.05 }).unwrap();
    let cells: Vec<Vec<u32>> = model.cluster("z").unwrap().cells.iter().map(|c| c.levels.clone()).collect();
    assert_eq!(cells, vec![vec![1, 2, 3], vec![4, 5], vec![6, 7]]);
    assert_eq!(model.cluster("z").unwrap().thresholds, vec![3.0, 5.0]);
}

#[test]
fn bonferroni_thresholds_follow_remaining_candidates() {
    assert!((bonferroni_threshold(0.05, 52, 1) - 0.05 / 52.0).abs() < 1e-15);
    assert!((bonferroni_threshold(0.05, 10, 3) - 0.05 / 8.0).abs() < 1e-15);
}

#[test]
fn sequential_and_parallel_paths_agree() {
    let d = mixed_dataset(9, Family::Binomial, false);
    let seq = FitOptions {
        exec: Execution::Sequential,
        ..FitOptions::default()
    };
    let par = FitOptions {
        exec: Execution::Parallel,
        ..FitOptions::default()
    };
    let a = fit_path(&FitContext::new(&d, &seq).unwrap(), 12).unwrap();
    let b = fit_path(&FitContext::new(&d, &par).unwrap(), 12).unwrap();
    assert_eq!(a.split_keys(a.len()), b.split_keys(b.len()));
    for (s, t) in a.steps.iter().zip(&b.steps) {
        assert_eq!(s.deviance, t.deviance);
    }
}

#[test]
fn coefficient_paths_cover_every_step_and_parameter() {
    let d = mixed_dataset(4, Family::Gaussian, false);
    let ctx = FitContext::new(&d, &FitOptions::default()).unwrap();
    let trace = fit_path(&ctx, 6).unwrap();
    let rows = coefficient_paths(&trace);
    let names = &trace.steps.last().unwrap().names;
    assert_eq!(rows.len(), trace.steps.len() * names.len());
    // The last split's coefficient is zero before it enters.
    let last = names[trace.len()].clone();
    for r in rows.iter().filter(|r| r.parameter == last && r.step < trace.len()) {
        assert_eq!(r.value, 0.0);
    }
}

#[test]
fn cv_rule_picks_a_length_on_the_path() {
    let d = mixed_dataset(5, Family::Gaussian, false);
    let ctx = FitContext::new(&d, &FitOptions::default()).unwrap();
    let trace = fit_path(&ctx, ctx.max_splits()).unwrap();
    let (l, model) = apply_stop_rule(&ctx, &trace, StopRule::Cv { folds: 5, seed: 3 }).unwrap();
    assert!(l <= trace.len());
    assert_eq!(model.n_splits, l);
    let (l2, _) = apply_stop_rule(&ctx, &trace, StopRule::Cv { folds: 5, seed: 3 }).unwrap();
    assert_eq!(l, l2);
}

#[test]
fn forward_step_on_exhausted_candidates_returns_none() {
    let mut r = rng(8);
    let z = codes_covering(&mut r, 40, 2);
    let y: Vec<f64> = z.iter().map(|&c| c as f64 + normal(&mut r)).collect();
    let d = Dataset::new("y", Family::Gaussian, y, vec![categorical("z", false, 2, Role::Tree, z)]).unwrap();
    let ctx = FitContext::new(&d, &FitOptions::default()).unwrap();
    let (design, fit) = ctx.fit(&[(0, 1.0)], &[]).unwrap();
    assert!(forward_step(&ctx, &[(0, 1.0)], &design, &fit, &[]).unwrap().is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partitions_are_exact_covers_with_cumulative_effects(seed in 0u64..2_000, alpha in 0.01f64..0.3) {
        let d = mixed_dataset(seed, Family::Gaussian, false);
        let model = fit_model(&d, &FitOptions::default(), StopRule::PValue { alpha }).unwrap();
        for cs in &model.clusters {
            let effects = cs.level_effects();
            if let Some(k) = cs.kind.levels() {
                prop_assert_eq!(effects.len(), k);
                let mut all: Vec<u32> = cs.cells.iter().flat_map(|c| c.levels.clone()).collect();
                all.sort_unstable();
                prop_assert_eq!(all, (1..=k as u32).collect::<Vec<_>>());
            }
            prop_assert_eq!(cs.cells[0].effect, 0.0);
            prop_assert_eq!(cs.cells.len(), cs.thresholds.len() + 1);
            if matches!(cs.kind, VariableKind::Ordinal { .. }) {
                for c in &cs.cells {
                    prop_assert!(c.levels.windows(2).all(|w| w[1] == w[0] + 1));
                }
            }
        }
    }

    #[test]
    fn folds_are_balanced(n in 10usize..500, k in 2usize..12, seed in any::<u64>()) {
        let folds = cv_fold_assignment(n, k, seed);
        let mut counts = vec![0usize; k];
        for f in folds {
            counts[f] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }

    #[test]
    fn more_splits_never_raise_training_deviance(seed in 0u64..500) {
        let mut r = rng(seed);
        let family = if r.random_bool(0.5) { Family::Gaussian } else { Family::Binomial };
        let d = mixed_dataset(seed, family, false);
        let ctx = FitContext::new(&d, &FitOptions::default()).unwrap();
        let trace = fit_path(&ctx, 10).unwrap();
        for w in trace.steps.windows(2) {
            prop_assert!(w[1].deviance <= w[0].deviance + 1e-8 * w[0].deviance.max(1.0));
        }
    }
}
