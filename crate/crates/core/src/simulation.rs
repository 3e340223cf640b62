//! Synthetic study with known clusters: data generation, recovery metrics and
//! comparison of stopping rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bootstrap::quantile_sorted;
use crate::data::{Column, ColumnData, Dataset, Role, VariableKind};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::glm::Family;
use crate::tree::{apply_stop_rule, fit_path, FitContext, FitOptions, StopRule, TreeStructuredModel};

/// Generator settings. Truth vectors give the effects of levels `2..=k`; the
/// first level is the reference with effect 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    pub ordinal_truth: Vec<Vec<f64>>,
    pub nominal_truth: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    /// Common correlation of the metric covariates (unit variances).
    pub correlation: f64,
    pub noise_sd: f64,
    pub intercept: f64,
    pub replicates: usize,
    pub seed: u64,
    pub max_splits: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 2000,
            ordinal_truth: vec![
                vec![0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0],
                vec![0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 2.0, 2.0],
                vec![1.0, 1.0, 2.0, 2.0],
                vec![0.0, 0.0, 0.0, 0.0],
            ],
            nominal_truth: vec![
                vec![0.0, 0.5, 0.5, -0.5, -0.5, 1.5, 1.5, -1.5, -1.5],
                vec![0.0, 0.0, 0.0, 0.0, -2.0, -2.0, -2.0, -2.0, -2.0],
                vec![1.0, 1.0, -1.0, -1.0],
                vec![0.0, 0.0, 0.0, 0.0],
            ],
            beta: vec![-2.0, 1.0, -1.0, 3.0, 2.0],
            correlation: 0.3,
            noise_sd: 1.0,
            intercept: 0.0,
            replicates: 25,
            seed: 1,
            max_splits: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidArgument(format!("n must be at least 10, got {}", self.n)));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::InvalidArgument("correlation must lie in [0,1)".into()));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::InvalidArgument("noise sd must be non-negative".into()));
        }
        if self.ordinal_truth.iter().chain(&self.nominal_truth).any(Vec::is_empty) {
            return Err(Error::InvalidArgument("truth vectors need at least one entry".into()));
        }
        Ok(())
    }
}

/// True level effects of one predictor, reference level included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePredictor {
    pub name: String,
    pub nominal: bool,
    pub effects: Vec<f64>,
}

impl TruePredictor {
    /// Level codes in evaluation order: natural for ordinal predictors,
    /// by true effect (then code) for nominal ones.
    pub fn evaluation_order(&self) -> Vec<u32> {
        let mut codes: Vec<u32> = (1..=self.effects.len() as u32).collect();
        if self.nominal {
            codes.sort_by(|&a, &b| {
                self.effects[a as usize - 1]
                    .total_cmp(&self.effects[b as usize - 1])
                    .then(a.cmp(&b))
            });
        }
        codes
    }

    pub fn true_splits(&self) -> usize {
        let order = self.evaluation_order();
        order
            .windows(2)
            .filter(|w| self.effects[w[0] as usize - 1] != self.effects[w[1] as usize - 1])
            .count()
    }

    pub fn true_clusters(&self) -> usize {
        self.true_splits() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub predictors: Vec<TruePredictor>,
    pub beta: Vec<f64>,
    pub covariates: Vec<String>,
}

impl Truth {
    pub fn true_splits(&self) -> usize {
        self.predictors.iter().map(TruePredictor::true_splits).sum()
    }
}

fn with_reference(v: &[f64]) -> Vec<f64> {
    std::iter::once(0.0).chain(v.iter().copied()).collect()
}

/// Draw one dataset: uniform level codes, equicorrelated gaussian covariates
/// and gaussian noise. Ordinal predictors are named `o1..`, nominal `n1..`,
/// covariates `x1..`.
pub fn generate_dataset(cfg: &SimConfig, seed: u64) -> Result<(Dataset, Truth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n;
    let mut predictors = Vec::new();
    for (i, t) in cfg.ordinal_truth.iter().enumerate() {
        predictors.push(TruePredictor {
            name: format!("o{}", i + 1),
            nominal: false,
            effects: with_reference(t),
        });
    }
    for (i, t) in cfg.nominal_truth.iter().enumerate() {
        predictors.push(TruePredictor {
            name: format!("n{}", i + 1),
            nominal: true,
            effects: with_reference(t),
        });
    }

    let mut y = vec![cfg.intercept; n];
    let mut columns = Vec::new();
    for p in &predictors {
        let k = p.effects.len();
        let codes: Vec<u32> = (0..n).map(|_| rng.random_range(1..=k as u32)).collect();
        for (yi, &c) in y.iter_mut().zip(&codes) {
            *yi += p.effects[c as usize - 1];
        }
        let levels = k;
        columns.push(Column {
            name: p.name.clone(),
            kind: if p.nominal {
                VariableKind::Nominal { levels }
            } else {
                VariableKind::Ordinal { levels }
            },
            role: Role::Tree,
            data: ColumnData::Codes(codes),
            labels: (1..=k).map(|c| c.to_string()).collect(),
        });
    }

    let shared = cfg.correlation.sqrt();
    let own = (1.0 - cfg.correlation).sqrt();
    let q = cfg.beta.len();
    let mut xs = vec![Vec::with_capacity(n); q];
    for _ in 0..n {
        let common: f64 = StandardNormal.sample(&mut rng);
        for x in xs.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            x.push(shared * common + own * e);
        }
    }
    for (j, x) in xs.iter().enumerate() {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += cfg.beta[j] * xi;
        }
    }
    if cfg.noise_sd > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for yi in y.iter_mut() {
            *yi += noise.sample(&mut rng);
        }
    }
    let covariates: Vec<String> = (1..=q).map(|j| format!("x{j}")).collect();
    for (name, x) in covariates.iter().zip(xs) {
        columns.push(Column {
            name: name.clone(),
            kind: VariableKind::Metric,
            role: Role::Linear,
            data: ColumnData::Values(x),
            labels: Vec::new(),
        });
    }
    let d = Dataset::new("y", Family::Gaussian, y, columns)?;
    Ok((
        d,
        Truth {
            predictors,
            beta: cfg.beta.clone(),
            covariates,
        },
    ))
}

/// Recovery metrics of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub rule: String,
    pub replicate: usize,
    pub seed: u64,
    pub mse_alpha_ordinal: f64,
    pub mse_alpha_nominal: f64,
    pub mse_beta: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub splits_ordinal: usize,
    pub splits_nominal: usize,
    pub splits_total: usize,
}

fn mean_defined(values: &[Option<f64>]) -> f64 {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn evaluate_fit(model: &TreeStructuredModel, truth: &Truth) -> Result<SimMetrics> {
    let mut mse_ord = Vec::new();
    let mut mse_nom = Vec::new();
    let mut fprs = Vec::new();
    let mut fnrs = Vec::new();
    for p in &truth.predictors {
        let cs = model.cluster(&p.name)?;
        let est = cs.level_effects();
        if est.len() != p.effects.len() {
            return Err(Error::DimensionMismatch {
                expected: p.effects.len(),
                got: est.len(),
            });
        }
        let k = est.len();
        let mse = (1..k)
            .map(|j| {
                let d = (est[j] - est[0]) - p.effects[j];
                d * d
            })
            .sum::<f64>()
            / (k - 1) as f64;
        if p.nominal {
            mse_nom.push(mse);
        } else {
            mse_ord.push(mse);
        }

        let (mut zero, mut false_pos, mut nonzero, mut false_neg) = (0usize, 0usize, 0usize, 0usize);
        for w in p.evaluation_order().windows(2) {
            let truly_zero = p.effects[w[0] as usize - 1] == p.effects[w[1] as usize - 1];
            let fused = cs.cell_of(w[0]) == cs.cell_of(w[1]);
            if truly_zero {
                zero += 1;
                false_pos += usize::from(!fused);
            } else {
                nonzero += 1;
                false_neg += usize::from(fused);
            }
        }
        fprs.push((zero > 0).then(|| false_pos as f64 / zero as f64));
        fnrs.push((nonzero > 0).then(|| false_neg as f64 / nonzero as f64));
    }

    let mut mse_beta = 0.0;
    for (name, &b) in truth.covariates.iter().zip(&truth.beta) {
        let est = model
            .linear
            .iter()
            .find(|nv| &nv.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
        mse_beta += (est.value - b).powi(2);
    }
    mse_beta /= truth.beta.len().max(1) as f64;

    let nominal_of = |var: &str| truth.predictors.iter().any(|p| p.name == var && p.nominal);
    let splits_nominal = model.splits.iter().filter(|s| nominal_of(&s.variable)).count();
    let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(SimMetrics {
        rule: model.rule.label(),
        replicate: 0,
        seed: 0,
        mse_alpha_ordinal: avg(&mse_ord),
        mse_alpha_nominal: avg(&mse_nom),
        mse_beta,
        fpr: mean_defined(&fprs),
        fnr: mean_defined(&fnrs),
        splits_ordinal: model.splits.len() - splits_nominal,
        splits_nominal,
        splits_total: model.splits.len(),
    })
}

/// The six rules compared in the study; `seed` drives the CV folds.
pub fn default_rules(seed: u64) -> Vec<StopRule> {
    vec![
        StopRule::Aic,
        StopRule::Bic,
        StopRule::Cv { folds: 5, seed },
        StopRule::Cv { folds: 10, seed },
        StopRule::PValue { alpha: 0.05 },
        StopRule::PValue { alpha: 0.1 },
    ]
}

/// Five-number summary (type 7 quartiles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Quartiles {
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub rule: String,
    pub metric: String,
    pub quartiles: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitHistogram {
    pub rule: String,
    /// `ordinal`, `nominal` or `total`.
    pub kind: String,
    /// `(split count, replicates)` pairs for every observed count.
    pub counts: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: SimConfig,
    pub rules: Vec<String>,
    pub metrics: Vec<SimMetrics>,
    pub summaries: Vec<MetricSummary>,
    pub histograms: Vec<SplitHistogram>,
    pub failures: Vec<ReplicateFailure>,
}

impl StudyReport {
    pub fn metrics_for<'a>(&'a self, rule: &'a str) -> impl Iterator<Item = &'a SimMetrics> + 'a {
        self.metrics.iter().filter(move |m| m.rule == rule)
    }

    pub fn median(&self, rule: &str, metric: &str) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.rule == rule && s.metric == metric)
            .map(|s| s.quartiles.median)
    }
}

/// Seed of replicate `index` derived from the study seed.
pub fn replicate_seed(seed: u64, index: usize) -> u64 {
    let mut rng = crate::bootstrap::replicate_rng(seed, index);
    rng.random()
}

/// Fit every rule on one generated dataset. The path is grown once and shared.
pub fn run_replicate(cfg: &SimConfig, rules: &[StopRule], index: usize, exec: Execution) -> Result<Vec<SimMetrics>> {
    let seed = replicate_seed(cfg.seed, index);
    let (d, truth) = generate_dataset(cfg, seed)?;
    let opts = FitOptions {
        max_splits: cfg.max_splits,
        exec,
        ..FitOptions::default()
    };
    let ctx = FitContext::new(&d, &opts)?;
    let trace = fit_path(&ctx, ctx.max_splits())?;
    rules
        .iter()
        .map(|&rule| {
            let rule = match rule {
                StopRule::Cv { folds, .. } => StopRule::Cv { folds, seed },
                r => r,
            };
            let (_, model) = apply_stop_rule(&ctx, &trace, rule)?;
            let mut m = evaluate_fit(&model, &truth)?;
            m.replicate = index;
            m.seed = seed;
            Ok(m)
        })
        .collect()
}

const METRICS: [&str; 8] = [
    "mse_alpha_ordinal",
    "mse_alpha_nominal",
    "mse_beta",
    "fpr",
    "fnr",
    "splits_ordinal",
    "splits_nominal",
    "splits_total",
];

fn metric_value(m: &SimMetrics, name: &str) -> f64 {
    match name {
        "mse_alpha_ordinal" => m.mse_alpha_ordinal,
        "mse_alpha_nominal" => m.mse_alpha_nominal,
        "mse_beta" => m.mse_beta,
        "fpr" => m.fpr,
        "fnr" => m.fnr,
        "splits_ordinal" => m.splits_ordinal as f64,
        "splits_nominal" => m.splits_nominal as f64,
        _ => m.splits_total as f64,
    }
}

fn histogram(values: impl Iterator<Item = usize>) -> Vec<(usize, usize)> {
    let mut map = std::collections::BTreeMap::new();
    for v in values {
        *map.entry(v).or_insert(0usize) += 1;
    }
    map.into_iter().collect()
}

/// Run `cfg.replicates` replicates under every rule and summarize.
pub fn run_study(cfg: &SimConfig, rules: &[StopRule], exec: Execution) -> Result<StudyReport> {
    cfg.validate()?;
    for r in rules {
        r.validate()?;
    }
    let per_rep = exec.map(cfg.replicates, |i| run_replicate(cfg, rules, i, exec.inner()));
    let mut metrics = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in per_rep.into_iter().enumerate() {
        match r {
            Ok(m) => metrics.extend(m),
            Err(e) => failures.push(ReplicateFailure {
                replicate: i,
                seed: replicate_seed(cfg.seed, i),
                error: e.to_string(),
            }),
        }
    }
    let labels: Vec<String> = rules.iter().map(StopRule::label).collect();
    let mut summaries = Vec::new();
    let mut histograms = Vec::new();
    for label in &labels {
        let rows: Vec<&SimMetrics> = metrics.iter().filter(|m| &m.rule == label).collect();
        for metric in METRICS {
            let values: Vec<f64> = rows.iter().map(|m| metric_value(m, metric)).collect();
            if let Some(quartiles) = Quartiles::of(&values) {
                summaries.push(MetricSummary {
                    rule: label.clone(),
                    metric: metric.to_string(),
                    quartiles,
                });
            }
        }
        for (kind, get) in [
            ("ordinal", (|m: &SimMetrics| m.splits_ordinal) as fn(&SimMetrics) -> usize),
            ("nominal", |m: &SimMetrics| m.splits_nominal),
            ("total", |m: &SimMetrics| m.splits_total),
        ] {
            histograms.push(SplitHistogram {
                rule: label.clone(),
                kind: kind.to_string(),
                counts: histogram(rows.iter().map(|m| get(m))),
            });
        }
    }
    Ok(StudyReport {
        config: cfg.clone(),
        rules: labels,
        metrics,
        summaries,
        histograms,
        failures,
    })
}
