use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{Split, SplitTrace, StopReason, TraceStep};
use crate::data::{Dataset, Design, DesignTemplate};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::glm::linalg::{cholesky, COLLINEAR_TOL};
use crate::glm::{fit_glm_with, lr_test, Family, GlmFit, IrlsOptions, Penalty, TestKind, TestResult};
use crate::smooth::{select_lambdas, DEFAULT_BASIS_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Upper bound on the path length; defaults to
    /// `min(m_total, 3 * variables * mean level count)`.
    pub max_splits: Option<usize>,
    pub basis_dim: usize,
    pub exec: Execution,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_splits: None,
            basis_dim: DEFAULT_BASIS_DIM,
            exec: Execution::default(),
        }
    }
}

/// Training data with its frozen design template and per-variable split
/// coordinates. Immutable; candidate fits share it.
#[derive(Debug, Clone)]
pub struct FitContext<'a> {
    pub data: &'a Dataset,
    pub template: DesignTemplate,
    pub family: Family,
    pub options: FitOptions,
    positions: Vec<Vec<f64>>,
}

impl<'a> FitContext<'a> {
    pub fn new(data: &'a Dataset, options: &FitOptions) -> Result<FitContext<'a>> {
        let template = DesignTemplate::from_dataset(data, options.basis_dim)?;
        let positions = template
            .split_vars
            .iter()
            .map(|v| v.positions(data))
            .collect::<Result<Vec<_>>>()?;
        Ok(FitContext {
            data,
            template,
            family: data.family,
            options: options.clone(),
            positions,
        })
    }

    pub fn m_total(&self) -> usize {
        self.template.total_candidates()
    }

    /// Path length bound after applying the default and the `m_total` cap.
    pub fn max_splits(&self) -> usize {
        let m_total = self.m_total();
        let default = {
            let active: Vec<usize> = self
                .template
                .split_vars
                .iter()
                .map(|v| v.splits.len())
                .filter(|&m| m > 0)
                .collect();
            if active.is_empty() {
                0
            } else {
                let mean_levels = active.iter().map(|m| (m + 1) as f64).sum::<f64>() / active.len() as f64;
                (3.0 * active.len() as f64 * mean_levels).ceil() as usize
            }
        };
        self.options.max_splits.unwrap_or(default).min(m_total)
    }

    pub fn design(&self, splits: &[(usize, f64)]) -> Result<Design> {
        self.template.design(self.data, splits)
    }

    /// Fit the model with the given splits at fixed smoothing parameters.
    pub fn fit(&self, splits: &[(usize, f64)], lambdas: &[f64]) -> Result<(Design, GlmFit)> {
        let design = self.design(splits)?;
        let fit = self.fit_design(&design, lambdas, None)?;
        Ok((design, fit))
    }

    pub(crate) fn fit_design(&self, design: &Design, lambdas: &[f64], start: Option<Vec<f64>>) -> Result<GlmFit> {
        let pen = design.penalty(&self.template, lambdas);
        let opts = IrlsOptions {
            start,
            ..IrlsOptions::default()
        };
        fit_glm_with(
            design.x.view(),
            &self.data.response,
            self.family,
            pen.as_ref().map(|m| Penalty { matrix: m, lambda: 1.0 }),
            &opts,
            Some(&design.names),
        )
    }

    /// GCV choice of the smoothing parameters. With `deviance_cap`, only
    /// values whose fit does not exceed that deviance are eligible.
    pub fn select_lambdas(&self, design: &Design, current: &[f64], deviance_cap: Option<f64>) -> Result<Vec<f64>> {
        if self.template.smooths.is_empty() {
            return Ok(Vec::new());
        }
        let blocks = design.penalty_blocks(&self.template);
        select_lambdas(design.x.view(), &self.data.response, self.family, &blocks, current, deviance_cap)
    }

    fn indicator(&self, var: usize, threshold: f64) -> Vec<f64> {
        self.positions[var]
            .iter()
            .map(|&z| if z > threshold { 1.0 } else { 0.0 })
            .collect()
    }

    /// Unselected candidates in (variable order, ascending threshold) order.
    pub fn remaining_candidates(&self, selected: &[(usize, f64)]) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for (v, var) in self.template.split_vars.iter().enumerate() {
            for &c in &var.splits.thresholds {
                if !selected.iter().any(|&(w, t)| w == v && t == c) {
                    out.push((v, c));
                }
            }
        }
        out
    }
}

/// Result of one forward step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub split: (usize, f64),
    /// Refit with the new split at the prefix's smoothing parameters.
    pub fit: GlmFit,
    pub test: TestResult,
    /// Deviance of every scored candidate (None: collinear).
    pub candidate_deviances: Vec<((usize, f64), Option<f64>)>,
}

/// Design with one extra indicator inserted after the existing split columns.
fn insert_indicator(design: &Design, indicator: &[f64]) -> Array2<f64> {
    let at = 1 + design.n_splits;
    let col = Array1::from(indicator.to_vec()).insert_axis(Axis(1));
    ndarray::concatenate(
        Axis(1),
        &[design.x.slice(s![.., ..at]), col.view(), design.x.slice(s![.., at..])],
    )
    .expect("row counts agree")
}

/// Exact least-squares deviances of `[X | v]` for many indicators `v`, via the
/// bordered normal equations of the current (possibly penalized) system.
struct GaussianScorer<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    chol: crate::glm::linalg::Cholesky,
    beta: Array1<f64>,
    resid: Array1<f64>,
}

impl<'a> GaussianScorer<'a> {
    fn new(x: &'a Array2<f64>, y: &'a [f64], penalty: Option<&Array2<f64>>, beta: &[f64]) -> Option<Self> {
        let mut a = x.t().dot(x);
        if let Some(p) = penalty {
            a += p;
        }
        let chol = cholesky(a.view(), COLLINEAR_TOL).ok()?;
        let beta = Array1::from(beta.to_vec());
        let fitted = x.dot(&beta);
        let resid = Array1::from_iter(y.iter().zip(fitted.iter()).map(|(yi, fi)| yi - fi));
        Some(GaussianScorer {
            x,
            y,
            chol,
            beta,
            resid,
        })
    }

    fn deviance(&self, v: &[f64]) -> Option<f64> {
        let p = self.x.ncols();
        let mut u = Array1::<f64>::zeros(p);
        let mut vv = 0.0;
        let mut vy = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                u.scaled_add(vi, &self.x.row(i));
                vv += vi * vi;
                vy += vi * self.y[i];
            }
        }
        if vv == 0.0 {
            return None;
        }
        let w = self.chol.solve(u.view());
        let schur = vv - u.dot(&w);
        if !(schur > COLLINEAR_TOL * vv) {
            return None;
        }
        let gamma = (vy - u.dot(&self.beta)) / schur;
        let xw = self.x.dot(&w);
        let mut rss = 0.0;
        for i in 0..v.len() {
            let r = self.resid[i] - gamma * (v[i] - xw[i]);
            rss += r * r;
        }
        Some(rss)
    }
}

/// Score every remaining candidate by refitting the full model with it added,
/// and return the one with minimal deviance.
///
/// Ties (relative difference below 1e-10) go to the earlier variable in schema
/// order, then to the smaller threshold. Returns `Ok(None)` when every
/// remaining candidate is collinear with the current design.
pub fn forward_step(
    ctx: &FitContext<'_>,
    selected: &[(usize, f64)],
    prefix_design: &Design,
    prefix_fit: &GlmFit,
    lambdas: &[f64],
) -> Result<Option<StepOutcome>> {
    let candidates = ctx.remaining_candidates(selected);
    if candidates.is_empty() {
        return Ok(None);
    }
    let penalty = prefix_design.penalty(&ctx.template, lambdas);
    let exec = ctx.options.exec;

    let deviances: Vec<Option<f64>> = match ctx.family {
        Family::Gaussian => {
            let scorer = GaussianScorer::new(
                &prefix_design.x,
                &ctx.data.response,
                penalty.as_ref(),
                &prefix_fit.coefficients,
            )
            .ok_or_else(|| Error::SingularDesign {
                columns: prefix_design.names.clone(),
            })?;
            exec.map(candidates.len(), |i| {
                let (v, c) = candidates[i];
                scorer.deviance(&ctx.indicator(v, c))
            })
        }
        Family::Binomial => {
            let at = 1 + prefix_design.n_splits;
            let mut start = prefix_fit.coefficients.clone();
            start.insert(at, 0.0);
            let wide_penalty = penalty.as_ref().map(|p| widen_penalty(p, at));
            exec.map(candidates.len(), |i| {
                let (v, c) = candidates[i];
                let x = insert_indicator(prefix_design, &ctx.indicator(v, c));
                let opts = IrlsOptions {
                    start: Some(start.clone()),
                    ..IrlsOptions::default()
                };
                fit_glm_with(
                    x.view(),
                    &ctx.data.response,
                    Family::Binomial,
                    wide_penalty.as_ref().map(|m| Penalty { matrix: m, lambda: 1.0 }),
                    &opts,
                    None,
                )
                .ok()
                .map(|f| f.deviance)
            })
        }
    };

    let mut best: Option<(usize, f64)> = None;
    for (i, d) in deviances.iter().enumerate() {
        let Some(d) = *d else { continue };
        match best {
            Some((_, bd)) if !(d < bd - 1e-10 * bd.abs()) => {}
            _ => best = Some((i, d)),
        }
    }
    let Some((best_idx, _)) = best else {
        return Ok(None);
    };
    let split = candidates[best_idx];

    let mut keys = selected.to_vec();
    keys.push(split);
    let design = ctx.design(&keys)?;
    let mut start = prefix_fit.coefficients.clone();
    start.insert(1 + prefix_design.n_splits, 0.0);
    let fit = ctx.fit_design(&design, lambdas, Some(start))?;
    let test = lr_test(&fit, prefix_fit).unwrap_or(TestResult {
        statistic: 0.0,
        df: 1,
        p_value: 1.0,
        kind: TestKind::Lr,
    });
    Ok(Some(StepOutcome {
        split,
        fit,
        test,
        candidate_deviances: candidates.into_iter().zip(deviances).collect(),
    }))
}

fn widen_penalty(p: &Array2<f64>, at: usize) -> Array2<f64> {
    let n = p.nrows() + 1;
    let mut out = Array2::<f64>::zeros((n, n));
    let map = |i: usize| if i < at { i } else { i + 1 };
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            out[[map(i), map(j)]] = p[[i, j]];
        }
    }
    out
}

fn trace_step(
    step: usize,
    split: Option<Split>,
    design: &Design,
    fit: &GlmFit,
    test: Option<&TestResult>,
    lambdas: &[f64],
) -> TraceStep {
    TraceStep {
        step,
        split,
        deviance: fit.deviance,
        log_likelihood: fit.log_likelihood,
        edf: fit.edf,
        statistic: test.map(|t| t.statistic),
        p_value: test.map(|t| t.p_value),
        names: design.names.clone(),
        coefficients: fit.coefficients.clone(),
        lambdas: lambdas.to_vec(),
        converged: fit.converged,
    }
}

/// Grow the forward path up to `max_splits` splits (capped at `m_total`).
pub fn fit_path(ctx: &FitContext<'_>, max_splits: usize) -> Result<SplitTrace> {
    let max_splits = max_splits.min(ctx.m_total());
    let n_smooth = ctx.template.smooths.len();
    let mut lambdas = vec![1.0; n_smooth];

    let mut selected: Vec<(usize, f64)> = Vec::new();
    let mut design = ctx.design(&selected)?;
    if n_smooth > 0 {
        lambdas = ctx.select_lambdas(&design, &lambdas, None)?;
    }
    let mut fit = ctx.fit_design(&design, &lambdas, None)?;
    let mut steps = vec![trace_step(0, None, &design, &fit, None, &lambdas)];

    let stop_reason = loop {
        if selected.len() >= max_splits {
            break if selected.len() >= ctx.m_total() {
                StopReason::Exhausted
            } else {
                StopReason::MaxSplits
            };
        }
        let Some(outcome) = forward_step(ctx, &selected, &design, &fit, &lambdas)? else {
            break if selected.len() >= ctx.m_total() {
                StopReason::Exhausted
            } else {
                StopReason::NoValidCandidate
            };
        };
        selected.push(outcome.split);
        let new_design = ctx.design(&selected)?;
        let new_fit = if n_smooth > 0 {
            // Keeps the path's deviance non-increasing: the prefix lambdas
            // already satisfy the cap, so some choice always does.
            let cap = fit.deviance + 1e-9 * fit.deviance.abs().max(1.0);
            let chosen = ctx.select_lambdas(&new_design, &lambdas, Some(cap))?;
            let refit = ctx.fit_design(&new_design, &chosen, Some(outcome.fit.coefficients.clone()))?;
            if refit.deviance <= cap {
                lambdas = chosen;
                refit
            } else {
                outcome.fit
            }
        } else {
            outcome.fit
        };
        let (v, c) = outcome.split;
        let step = selected.len();
        let split = Split {
            variable: ctx.template.split_vars[v].name.clone(),
            var_index: v,
            threshold: c,
            step,
            effect: new_fit.coefficients[step],
        };
        steps.push(trace_step(step, Some(split), &new_design, &new_fit, Some(&outcome.test), &lambdas));
        design = new_design;
        fit = new_fit;
    };

    Ok(SplitTrace {
        steps,
        m_total: ctx.m_total(),
        max_splits,
        stop_reason,
    })
}
