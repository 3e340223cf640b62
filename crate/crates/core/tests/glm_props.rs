mod common;

use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::Rng;
use treefuse::glm::{fit_glm, lr_test, predictive_deviance};
use treefuse::Family;

use common::*;

fn random_problem(seed: u64, family: Family) -> (Array2<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let n = r.random_range(40..=150usize);
    let p = r.random_range(2..=5usize);
    let mut x = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        x[[i, 0]] = 1.0;
        for j in 1..p {
            x[[i, j]] = normal(&mut r);
        }
    }
    let eta: Vec<f64> = (0..n).map(|i| 0.2 + 0.6 * x[[i, 1]]).collect();
    let y = response(&mut r, family, &eta, 1.0);
    (x, y)
}

fn family_of(binomial: bool) -> Family {
    if binomial {
        Family::Binomial
    } else {
        Family::Gaussian
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nested_model_never_fits_better(seed in 0u64..5_000, binomial in any::<bool>()) {
        let family = family_of(binomial);
        let (x, y) = random_problem(seed, family);
        let full = fit_glm(x.view(), &y, family, None).unwrap();
        let reduced = fit_glm(x.slice(s![.., ..x.ncols() - 1]), &y, family, None).unwrap();
        prop_assert!(reduced.deviance >= full.deviance - 1e-8 * full.deviance.max(1.0));
        let t = lr_test(&full, &reduced).unwrap();
        prop_assert!((0.0..=1.0).contains(&t.p_value));
    }

    #[test]
    fn row_order_does_not_change_the_fit(seed in 0u64..5_000, binomial in any::<bool>()) {
        let family = family_of(binomial);
        let (x, y) = random_problem(seed, family);
        let n = y.len();
        let rows: Vec<usize> = (0..n).rev().collect();
        let xp = x.select(ndarray::Axis(0), &rows);
        let yp: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let a = fit_glm(x.view(), &y, family, None).unwrap();
        let b = fit_glm(xp.view(), &yp, family, None).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0));
        }
        prop_assert!((a.deviance - b.deviance).abs() <= 1e-9 * a.deviance.max(1.0));
    }

    #[test]
    fn in_sample_predictive_deviance_matches_fit(seed in 0u64..5_000, binomial in any::<bool>()) {
        let family = family_of(binomial);
        let (x, y) = random_problem(seed, family);
        let fit = fit_glm(x.view(), &y, family, None).unwrap();
        let pd = predictive_deviance(&fit, x.view(), &y).unwrap();
        prop_assert!((pd - fit.deviance).abs() <= 1e-8 * fit.deviance.max(1.0));
    }
}

#[test]
fn duplicated_column_is_reported_singular() {
    let (x, y) = random_problem(5, Family::Gaussian);
    let dup = ndarray::concatenate(ndarray::Axis(1), &[x.view(), x.slice(s![.., 1..2])]).unwrap();
    let err = fit_glm(dup.view(), &y, Family::Gaussian, None).unwrap_err();
    assert_eq!(err.kind(), "singular_design");
}
