use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::path::{fit_path, FitContext, FitOptions};
use super::{SplitTrace, StopRule, TraceStep, TreeStructuredModel};
use crate::data::Dataset;
use crate::error::Result;
use crate::glm::{predictive_deviance, Family};

/// Entry threshold `alpha / (m_total - (step - 1))` for the 1-based `step`.
pub fn bonferroni_threshold(alpha: f64, m_total: usize, step: usize) -> f64 {
    let remaining = m_total.saturating_sub(step.saturating_sub(1)).max(1);
    alpha / remaining as f64
}

/// `-2 loglik + penalty * edf`, with edf counting the intercept, one per
/// split, the linear terms and the smooth terms' effective df.
pub fn information_criterion(step: &TraceStep, family: Family, penalty: f64) -> f64 {
    // The gaussian scale parameter is estimated too.
    let extra = if family.has_dispersion() { 1.0 } else { 0.0 };
    -2.0 * step.log_likelihood + penalty * (step.edf + extra)
}

fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

fn pvalue_length(trace: &SplitTrace, alpha: f64) -> usize {
    trace
        .p_values()
        .iter()
        .enumerate()
        .take_while(|&(l, &p)| p <= bonferroni_threshold(alpha, trace.m_total, l + 1))
        .count()
}

/// Fold label in `0..folds` per row: a seeded shuffle of `i % folds`.
pub fn cv_fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % folds).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);
    labels
}

/// Mean held-out deviance for every prefix length `0..=max_splits`.
pub(crate) fn cv_curve(ctx: &FitContext<'_>, max_splits: usize, folds: usize, seed: u64) -> Result<Vec<f64>> {
    let n = ctx.data.n();
    let labels = cv_fold_assignment(n, folds, seed);
    let exec = ctx.options.exec;
    let inner = FitOptions {
        exec: exec.inner(),
        ..ctx.options.clone()
    };
    let per_fold: Vec<Result<Vec<f64>>> = exec.map(folds, |f| {
        let train_rows: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
        let test_rows: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
        let train = ctx.data.select_rows(&train_rows);
        let test = ctx.data.select_rows(&test_rows);
        let fold_ctx = FitContext::new(&train, &inner)?;
        let path = fit_path(&fold_ctx, max_splits)?;
        let mut out = Vec::with_capacity(max_splits + 1);
        for l in 0..=max_splits {
            let step = &path.steps[l.min(path.len())];
            let keys = path.split_keys(l.min(path.len()));
            let (_, fit) = fold_ctx.fit(&keys, &step.lambdas)?;
            let holdout = fold_ctx.template.design(&test, &keys)?;
            out.push(predictive_deviance(&fit, holdout.x.view(), &test.response)?);
        }
        Ok(out)
    });
    let mut mean = vec![0.0; max_splits + 1];
    for fold in per_fold {
        for (m, d) in mean.iter_mut().zip(fold?) {
            *m += d / folds as f64;
        }
    }
    Ok(mean)
}

/// Number of splits to keep according to `rule`.
pub(crate) fn chosen_length(ctx: &FitContext<'_>, trace: &SplitTrace, rule: StopRule) -> Result<usize> {
    rule.validate()?;
    let n = ctx.data.n() as f64;
    Ok(match rule {
        StopRule::PValue { alpha } => pvalue_length(trace, alpha),
        StopRule::Aic | StopRule::Bic => {
            let pen = if rule == StopRule::Aic { 2.0 } else { n.ln() };
            let scores: Vec<f64> = trace
                .steps
                .iter()
                .map(|s| information_criterion(s, ctx.family, pen))
                .collect();
            argmin(&scores)
        }
        StopRule::Cv { folds, seed } => {
            let curve = cv_curve(ctx, trace.len(), folds, seed)?;
            argmin(&curve)
        }
    })
}

/// Choose the split count on `trace` and refit the model with exactly the
/// first `L` splits on all data.
pub fn apply_stop_rule(
    ctx: &FitContext<'_>,
    trace: &SplitTrace,
    rule: StopRule,
) -> Result<(usize, TreeStructuredModel)> {
    let l = chosen_length(ctx, trace, rule)?;
    let model = model_at(ctx, trace, l, rule)?;
    Ok((l, model))
}

/// Final model with the first `l` splits of `trace`.
pub(crate) fn model_at(
    ctx: &FitContext<'_>,
    trace: &SplitTrace,
    l: usize,
    rule: StopRule,
) -> Result<TreeStructuredModel> {
    let keys = trace.split_keys(l);
    let lambdas = trace.steps[l].lambdas.clone();
    let (design, fit) = ctx.fit(&keys, &lambdas)?;
    TreeStructuredModel::assemble(
        ctx.data,
        ctx.template.clone(),
        trace.clone(),
        l,
        rule,
        design.names.clone(),
        lambdas,
        fit,
        &design,
    )
}

/// Grow the path and apply the stopping rule.
pub fn fit_model(data: &Dataset, options: &FitOptions, rule: StopRule) -> Result<TreeStructuredModel> {
    rule.validate()?;
    let ctx = FitContext::new(data, options)?;
    let trace = fit_path(&ctx, ctx.max_splits())?;
    Ok(apply_stop_rule(&ctx, &trace, rule)?.1)
}
