#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use treefuse::data::{Column, ColumnData, Role, VariableKind};
use treefuse::{Dataset, Family};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Codes in `1..=k` with every level present (the first `k` rows cycle through them).
pub fn codes_covering(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<u32> {
    let mut c: Vec<u32> = (0..n)
        .map(|i| if i < k { i as u32 + 1 } else { rng.random_range(1..=k as u32) })
        .collect();
    // Shuffle so the covering rows are not always first.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        c.swap(i, j);
    }
    c
}

pub fn categorical(name: &str, nominal: bool, k: usize, role: Role, codes: Vec<u32>) -> Column {
    Column {
        name: name.into(),
        kind: if nominal {
            VariableKind::Nominal { levels: k }
        } else {
            VariableKind::Ordinal { levels: k }
        },
        role,
        data: ColumnData::Codes(codes),
        labels: (1..=k).map(|c| format!("L{c}")).collect(),
    }
}

pub fn metric(name: &str, role: Role, values: Vec<f64>) -> Column {
    Column {
        name: name.into(),
        kind: VariableKind::Metric,
        role,
        data: ColumnData::Values(values),
        labels: Vec::new(),
    }
}

/// Gaussian or binomial response from a linear predictor.
pub fn response(rng: &mut ChaCha8Rng, family: Family, eta: &[f64], sd: f64) -> Vec<f64> {
    eta.iter()
        .map(|&e| match family {
            Family::Gaussian => e + sd * normal(rng),
            Family::Binomial => {
                let p = 1.0 / (1.0 + (-e).exp());
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect()
}

/// Random single-tree-predictor problem, optionally with two linear covariates.
pub struct SmallInstance {
    pub data: Dataset,
    pub nominal: bool,
    pub k: usize,
    pub covariates: bool,
}

pub fn small_instance(seed: u64) -> SmallInstance {
    let mut r = rng(seed);
    let k = r.random_range(2..=6usize);
    let n = r.random_range(30..=200usize);
    let nominal = r.random_bool(0.5);
    let covariates = r.random_bool(0.5);
    let family = if r.random_bool(0.5) { Family::Gaussian } else { Family::Binomial };
    let codes = codes_covering(&mut r, n, k);
    let effects: Vec<f64> = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
    let x1: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let x2: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let eta: Vec<f64> = (0..n)
        .map(|i| effects[codes[i] as usize - 1] + if covariates { 0.5 * x1[i] - 0.3 * x2[i] } else { 0.0 })
        .collect();
    let y = response(&mut r, family, &eta, 1.0);
    let mut cols = vec![categorical("z", nominal, k, Role::Tree, codes)];
    if covariates {
        cols.push(metric("x1", Role::Linear, x1));
        cols.push(metric("x2", Role::Linear, x2));
    }
    SmallInstance {
        data: Dataset::new("y", family, y, cols).unwrap(),
        nominal,
        k,
        covariates,
    }
}

/// Mixed problem: ordinal, nominal and metric tree variables, a linear
/// covariate, and optionally a smooth term.
pub fn mixed_dataset(seed: u64, family: Family, smooth: bool) -> Dataset {
    let mut r = rng(seed);
    let n = r.random_range(120..=300usize);
    let ko = r.random_range(3..=7usize);
    let kn = r.random_range(3..=6usize);
    let o = codes_covering(&mut r, n, ko);
    let nm = codes_covering(&mut r, n, kn);
    let m: Vec<f64> = (0..n).map(|_| (r.random_range(0..12) as f64) * 0.5).collect();
    let x: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let s: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    let eo: Vec<f64> = (0..ko).map(|j| if j >= ko / 2 { 0.8 } else { 0.0 }).collect();
    let en: Vec<f64> = (0..kn).map(|_| r.random_range(-0.8..0.8)).collect();
    let eta: Vec<f64> = (0..n)
        .map(|i| {
            eo[o[i] as usize - 1]
                + en[nm[i] as usize - 1]
                + if m[i] > 3.0 { 0.5 } else { 0.0 }
                + 0.4 * x[i]
                + if smooth { (6.0 * s[i]).sin() } else { 0.0 }
        })
        .collect();
    let y = response(&mut r, family, &eta, 1.0);
    let mut cols = vec![
        categorical("ord", false, ko, Role::Tree, o),
        categorical("nom", true, kn, Role::Tree, nm),
        metric("met", Role::Tree, m),
        metric("x", Role::Linear, x),
    ];
    if smooth {
        cols.push(metric("s", Role::Smooth, s));
    }
    Dataset::new("y", family, y, cols).unwrap()
}

pub fn permute(d: &Dataset, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut rows: Vec<usize> = (0..d.n()).collect();
    for i in (1..rows.len()).rev() {
        let j = r.random_range(0..=i);
        rows.swap(i, j);
    }
    d.select_rows(&rows)
}
