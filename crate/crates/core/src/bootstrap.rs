//! Nonparametric bootstrap of the complete fitting pipeline: percentile
//! intervals for level effects and linear coefficients, and co-clustering
//! frequencies of categorical levels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, Dataset};
use crate::error::{Error, Result};
use crate::tree::{fit_model, ClusterSet, FitOptions, NamedValue, StopRule, TreeStructuredModel};

/// Random stream of replicate `index`. Streams are independent of the total
/// replicate count, so extending a run keeps the earlier replicates.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Row indices of a size-`n` resample drawn with replacement.
pub fn resample_rows(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub rule: StopRule,
    pub fit: FitOptions,
    /// When false every replicate refits the original rows (a test hook).
    pub resample: bool,
}

/// The part of a replicate fit needed for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub index: usize,
    pub n_splits: usize,
    pub clusters: Vec<ClusterSet>,
    pub linear: Vec<NamedValue>,
    /// Per tree variable, whether each level code occurs in the resample.
    pub observed: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ReplicateOutcome {
    Fitted(ReplicateSummary),
    Failed { index: usize, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: usize,
    pub seed: u64,
    pub outcomes: Vec<ReplicateOutcome>,
}

impl BootstrapResult {
    pub fn successes(&self) -> impl Iterator<Item = &ReplicateSummary> {
        self.outcomes.iter().filter_map(|o| match o {
            ReplicateOutcome::Fitted(s) => Some(s),
            ReplicateOutcome::Failed { .. } => None,
        })
    }

    pub fn n_failures(&self) -> usize {
        self.outcomes.len() - self.successes().count()
    }

    pub fn failure_rate(&self) -> f64 {
        if self.replicates == 0 {
            0.0
        } else {
            self.n_failures() as f64 / self.replicates as f64
        }
    }
}

fn observed_levels(d: &Dataset, clusters: &[ClusterSet]) -> Vec<Vec<bool>> {
    clusters
        .iter()
        .map(|cs| {
            let k = cs.kind.levels().unwrap_or(0);
            let mut seen = vec![false; k];
            if let Ok(col) = d.column(&cs.variable) {
                if let ColumnData::Codes(codes) = &col.data {
                    for &c in codes {
                        seen[c as usize - 1] = true;
                    }
                }
            }
            seen
        })
        .collect()
}

/// Refit the pipeline on `opts.replicates` resamples of `d`. Replicates that
/// fail are recorded and never abort the run.
pub fn run_bootstrap(d: &Dataset, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    if opts.replicates == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    opts.rule.validate()?;
    let exec = opts.fit.exec;
    let inner = FitOptions {
        exec: exec.inner(),
        ..opts.fit.clone()
    };
    let outcomes = exec.map(opts.replicates, |b| {
        let sample = if opts.resample {
            let rows = resample_rows(d.n(), &mut replicate_rng(opts.seed, b));
            d.select_rows(&rows)
        } else {
            d.clone()
        };
        match fit_model(&sample, &inner, opts.rule) {
            Ok(model) => ReplicateOutcome::Fitted(ReplicateSummary {
                index: b,
                n_splits: model.n_splits,
                observed: observed_levels(&sample, &model.clusters),
                clusters: model.clusters,
                linear: model.linear,
            }),
            Err(e) => ReplicateOutcome::Failed {
                index: b,
                error: e.to_string(),
            },
        }
    });
    Ok(BootstrapResult {
        replicates: opts.replicates,
        seed: opts.seed,
        outcomes,
    })
}

/// Replicate level effects of one categorical variable, by original level
/// code and relative to the original model's reference level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedEffects {
    pub variable: String,
    pub labels: Vec<String>,
    pub reference_level: u32,
    /// One row per successful replicate, `k` columns.
    pub rows: Vec<Vec<f64>>,
    pub skipped: usize,
}

fn categorical_cluster<'a>(model: &'a TreeStructuredModel, var: &str) -> Result<&'a ClusterSet> {
    let cs = model.cluster(var)?;
    if cs.kind.levels().is_none() {
        return Err(Error::InvalidArgument(format!("'{var}' is not categorical")));
    }
    Ok(cs)
}

fn level_labels(cs: &ClusterSet) -> Vec<String> {
    let k = cs.kind.levels().unwrap_or(0);
    let mut labels = vec![String::new(); k];
    for cell in &cs.cells {
        for (&code, label) in cell.levels.iter().zip(&cell.labels) {
            labels[code as usize - 1] = label.clone();
        }
    }
    labels
}

pub fn align_effects(result: &BootstrapResult, original: &TreeStructuredModel, var: &str) -> Result<AlignedEffects> {
    let cs = categorical_cluster(original, var)?;
    let reference = cs.reference_level().unwrap_or(1);
    let mut rows = Vec::new();
    for rep in result.successes() {
        let Some(rc) = rep.clusters.iter().find(|c| c.variable == var) else {
            continue;
        };
        let effects = rc.level_effects();
        let base = effects[reference as usize - 1];
        rows.push(effects.iter().map(|e| e - base).collect());
    }
    Ok(AlignedEffects {
        variable: var.to_string(),
        labels: level_labels(cs),
        reference_level: reference,
        skipped: result.n_failures(),
        rows,
    })
}

/// Linear-interpolation quantile (the common "type 7" definition) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval at `level` from bootstrap values.
pub fn percentile_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "percentile interval needs at least 2 replicates, got {}",
            values.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0,1), got {level}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub variable: String,
    pub parameter: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Intervals for every level effect of an aligned variable.
pub fn confidence_intervals(
    effects: &AlignedEffects,
    original: &TreeStructuredModel,
    level: f64,
) -> Result<Vec<IntervalRow>> {
    let cs = categorical_cluster(original, &effects.variable)?;
    let est = cs.level_effects();
    let base = est[effects.reference_level as usize - 1];
    (0..effects.labels.len())
        .map(|j| {
            let column: Vec<f64> = effects.rows.iter().map(|r| r[j]).collect();
            let (lower, upper) = percentile_interval(&column, level)?;
            Ok(IntervalRow {
                variable: effects.variable.clone(),
                parameter: effects.labels[j].clone(),
                estimate: est[j] - base,
                lower,
                upper,
            })
        })
        .collect()
}

/// Intervals for the linear coefficients.
pub fn linear_intervals(result: &BootstrapResult, original: &TreeStructuredModel, level: f64) -> Result<Vec<IntervalRow>> {
    original
        .linear
        .iter()
        .enumerate()
        .map(|(j, nv)| {
            let values: Vec<f64> = result.successes().filter_map(|r| r.linear.get(j).map(|v| v.value)).collect();
            let (lower, upper) = percentile_interval(&values, level)?;
            Ok(IntervalRow {
                variable: nv.name.clone(),
                parameter: nv.name.clone(),
                estimate: nv.value,
                lower,
                upper,
            })
        })
        .collect()
}

/// Co-clustering frequencies `s_ij = n_ij / B` of one categorical variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub variable: String,
    pub labels: Vec<String>,
    pub replicates: usize,
    pub counts: Vec<Vec<usize>>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStability {
    pub variable: String,
    pub cluster: usize,
    pub levels: Vec<u32>,
    pub labels: Vec<String>,
    pub stability: f64,
}

/// Similarity matrix over replicates and the mean within-cluster similarity
/// of every cluster of the original model. Levels absent from a resample get
/// no counts from it; failed replicates still count towards `B`.
pub fn similarity_and_stability(
    result: &BootstrapResult,
    original: &TreeStructuredModel,
    var: &str,
) -> Result<(SimilarityMatrix, Vec<ClusterStability>)> {
    let cs = categorical_cluster(original, var)?;
    let k = cs.kind.levels().unwrap_or(0);
    let v = original
        .clusters
        .iter()
        .position(|c| c.variable == var)
        .expect("cluster found above");
    let mut counts = vec![vec![0usize; k]; k];
    for rep in result.successes() {
        let Some(rc) = rep.clusters.iter().find(|c| c.variable == var) else {
            continue;
        };
        let seen = &rep.observed[v];
        let cell: Vec<Option<usize>> = (1..=k as u32).map(|c| rc.cell_of(c)).collect();
        for i in 0..k {
            for j in 0..k {
                if i != j && seen[i] && seen[j] && cell[i].is_some() && cell[i] == cell[j] {
                    counts[i][j] += 1;
                }
            }
        }
    }
    let b = result.replicates as f64;
    let values: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { 1.0 } else { counts[i][j] as f64 / b })
                .collect()
        })
        .collect();

    let stability = cs
        .cells
        .iter()
        .enumerate()
        .map(|(ci, cell)| {
            let idx: Vec<usize> = cell.levels.iter().map(|&c| c as usize - 1).collect();
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for a in 0..idx.len() {
                for bb in a + 1..idx.len() {
                    sum += values[idx[a]][idx[bb]];
                    pairs += 1;
                }
            }
            ClusterStability {
                variable: var.to_string(),
                cluster: ci + 1,
                levels: cell.levels.clone(),
                labels: cell.labels.clone(),
                stability: if pairs == 0 { 1.0 } else { sum / pairs as f64 },
            }
        })
        .collect();

    Ok((
        SimilarityMatrix {
            variable: var.to_string(),
            labels: level_labels(cs),
            replicates: result.replicates,
            counts,
            values,
        },
        stability,
    ))
}
