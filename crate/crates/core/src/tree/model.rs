use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::{Split, SplitTrace, StopRule};
use crate::data::{ColumnData, Dataset, DesignTemplate, SplitVariable, VariableKind};
use crate::error::{Error, Result};
use crate::glm::GlmFit;
use crate::smooth::SmoothTermFit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

/// One cell of fused levels. Categorical cells list original level codes;
/// metric cells are the half-open interval `(lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCell {
    pub levels: Vec<u32>,
    pub labels: Vec<String>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Effect relative to the lowest cell.
    pub effect: f64,
}

/// Partition of one tree variable's levels with one effect per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub variable: String,
    pub kind: VariableKind,
    /// Sorted selected thresholds (ranks for nominal variables).
    pub thresholds: Vec<f64>,
    pub cells: Vec<ClusterCell>,
}

impl ClusterSet {
    /// Index of the cell holding split coordinate `z` (code, rank or value).
    fn cell_at_position(&self, z: f64) -> usize {
        self.thresholds.iter().filter(|&&c| z > c).count()
    }

    /// Cell index of an original level code (categorical variables only).
    pub fn cell_of(&self, code: u32) -> Option<usize> {
        self.cells.iter().position(|c| c.levels.contains(&code))
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Effect per original level code, indexed by `code - 1`.
    pub fn level_effects(&self) -> Vec<f64> {
        let k = self.kind.levels().unwrap_or(0);
        (1..=k as u32)
            .map(|code| self.cell_of(code).map(|i| self.cells[i].effect).unwrap_or(0.0))
            .collect()
    }

    /// Original code of the level in the lowest cell that carries effect 0.
    pub fn reference_level(&self) -> Option<u32> {
        self.cells.first().and_then(|c| c.levels.first().copied())
    }
}

/// Build the partition of `var` from its selected `(threshold, effect)` pairs.
pub(crate) fn partition_for(var: &SplitVariable, labels: &[String], splits: &[(f64, f64)]) -> ClusterSet {
    let mut sorted = splits.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let thresholds: Vec<f64> = sorted.iter().map(|s| s.0).collect();
    let mut effects = Vec::with_capacity(sorted.len() + 1);
    let mut acc = 0.0;
    effects.push(0.0);
    for &(_, e) in &sorted {
        acc += e;
        effects.push(acc);
    }
    let label = |code: u32| labels.get(code as usize - 1).cloned().unwrap_or_else(|| code.to_string());

    let cells = match var.kind.levels() {
        Some(k) => {
            let mut cells: Vec<ClusterCell> = effects
                .iter()
                .map(|&effect| ClusterCell {
                    levels: Vec::new(),
                    labels: Vec::new(),
                    lower: None,
                    upper: None,
                    effect,
                })
                .collect();
            for pos in 1..=k as u32 {
                let code = var.order().map(|o| o.level_at(pos)).unwrap_or(pos);
                let cell = thresholds.iter().filter(|&&c| pos as f64 > c).count();
                cells[cell].levels.push(code);
            }
            for cell in &mut cells {
                cell.levels.sort_unstable();
                cell.labels = cell.levels.iter().map(|&c| label(c)).collect();
            }
            cells
        }
        None => effects
            .iter()
            .enumerate()
            .map(|(i, &effect)| ClusterCell {
                levels: Vec::new(),
                labels: Vec::new(),
                lower: if i == 0 { None } else { Some(thresholds[i - 1]) },
                upper: thresholds.get(i).copied(),
                effect,
            })
            .collect(),
    };
    ClusterSet {
        variable: var.name.clone(),
        kind: var.kind,
        thresholds,
        cells,
    }
}

/// Final model: the first `n_splits` splits of the trace refitted on all data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeStructuredModel {
    pub response: String,
    pub intercept: f64,
    pub clusters: Vec<ClusterSet>,
    pub linear: Vec<NamedValue>,
    pub smooths: Vec<SmoothTermFit>,
    /// Selected splits with effects from the final fit.
    pub splits: Vec<Split>,
    pub n_splits: usize,
    pub rule: StopRule,
    pub names: Vec<String>,
    pub lambdas: Vec<f64>,
    pub fit: GlmFit,
    pub template: DesignTemplate,
    pub trace: SplitTrace,
}

impl TreeStructuredModel {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        data: &Dataset,
        template: DesignTemplate,
        trace: SplitTrace,
        n_splits: usize,
        rule: StopRule,
        names: Vec<String>,
        lambdas: Vec<f64>,
        fit: GlmFit,
        design: &crate::data::Design,
    ) -> Result<TreeStructuredModel> {
        let coefs = &fit.coefficients;
        let splits: Vec<Split> = trace
            .splits()
            .take(n_splits)
            .enumerate()
            .map(|(j, s)| Split {
                effect: coefs[1 + j],
                ..s.clone()
            })
            .collect();

        let mut clusters = Vec::with_capacity(template.split_vars.len());
        for (v, var) in template.split_vars.iter().enumerate() {
            let own: Vec<(f64, f64)> = splits
                .iter()
                .filter(|s| s.var_index == v)
                .map(|s| (s.threshold, s.effect))
                .collect();
            let labels = &data.column(&var.name)?.labels;
            clusters.push(partition_for(var, labels, &own));
        }

        let linear = design
            .linear_columns
            .clone()
            .map(|j| NamedValue {
                name: names[j].clone(),
                value: coefs[j],
            })
            .collect();

        let mut smooths = Vec::with_capacity(template.smooths.len());
        if !template.smooths.is_empty() {
            let pen = design.penalty(&template, &lambdas).expect("smooth terms present");
            let (_, mu) = crate::glm::predict_response(&fit, design.x.view())?;
            let weights: Vec<f64> = mu
                .iter()
                .map(|&m| {
                    let d = fit.family.mu_eta(m);
                    d * d / fit.family.variance(m)
                })
                .collect();
            for ((term, cols), &lambda) in template.smooths.iter().zip(&design.smooth_columns).zip(&lambdas) {
                let c = coefs[cols.clone()].to_vec();
                let edf = crate::smooth::block_edf(design.x.view(), &weights, &pen, cols.clone());
                smooths.push(SmoothTermFit {
                    variable: term.variable.clone(),
                    term: term.clone(),
                    grid: term.grid(&c, crate::smooth::EXPORT_POINTS),
                    coefficients: c,
                    lambda,
                    edf,
                });
            }
        }

        Ok(TreeStructuredModel {
            response: data.response_name.clone(),
            intercept: coefs[0],
            clusters,
            linear,
            smooths,
            splits,
            n_splits,
            rule,
            names,
            lambdas,
            fit,
            template,
            trace,
        })
    }

    pub fn split_keys(&self) -> Vec<(usize, f64)> {
        self.splits.iter().map(Split::key).collect()
    }

    pub fn cluster(&self, var: &str) -> Result<&ClusterSet> {
        self.clusters
            .iter()
            .find(|c| c.variable == var)
            .ok_or_else(|| Error::UnknownVariable(var.to_string()))
    }

    /// Effect per original level code of a categorical tree variable.
    pub fn level_effects(&self, var: &str) -> Result<Vec<f64>> {
        Ok(self.cluster(var)?.level_effects())
    }

    /// Linear predictor on `d` through the design matrix of the final fit.
    pub fn predict_eta(&self, d: &Dataset) -> Result<Vec<f64>> {
        let design = self.template.design(d, &self.split_keys())?;
        Ok(design.x.dot(&Array1::from(self.fit.coefficients.clone())).to_vec())
    }

    pub fn predict_mean(&self, d: &Dataset) -> Result<Vec<f64>> {
        Ok(self
            .predict_eta(d)?
            .into_iter()
            .map(|e| self.fit.family.linkinv(e))
            .collect())
    }

    /// Linear predictor assembled term by term from the partition effects,
    /// linear coefficients and smooth functions, without a design matrix.
    pub fn reconstruct_eta(&self, d: &Dataset) -> Result<Vec<f64>> {
        let n = d.n();
        let mut eta = vec![self.intercept; n];
        for (var, cs) in self.template.split_vars.iter().zip(&self.clusters) {
            let col = d.column(&var.name)?;
            match (&col.data, var.kind.levels()) {
                (ColumnData::Codes(codes), Some(_)) => {
                    let effects = cs.level_effects();
                    for (e, &c) in eta.iter_mut().zip(codes) {
                        *e += effects[c as usize - 1];
                    }
                }
                _ => {
                    for (e, z) in eta.iter_mut().zip(col.numeric()) {
                        *e += cs.cells[cs.cell_at_position(z)].effect;
                    }
                }
            }
        }
        let mut j = 0;
        for term in &self.template.linear {
            let col = d.column(&term.name)?;
            match (&col.data, term.kind.levels()) {
                (ColumnData::Codes(codes), Some(k)) => {
                    for (e, &c) in eta.iter_mut().zip(codes) {
                        if c >= 2 {
                            *e += self.linear[j + c as usize - 2].value;
                        }
                    }
                    j += k - 1;
                }
                _ => {
                    for (e, x) in eta.iter_mut().zip(col.numeric()) {
                        *e += self.linear[j].value * x;
                    }
                    j += 1;
                }
            }
        }
        for s in &self.smooths {
            let x = d
                .column(&s.variable)?
                .values()
                .ok_or_else(|| Error::Schema(format!("smooth column '{}' must be metric", s.variable)))?;
            for (e, f) in eta.iter_mut().zip(s.term.evaluate(&s.coefficients, x)) {
                *e += f;
            }
        }
        Ok(eta)
    }
}

/// Partition of a tree variable in a fitted model.
pub fn extract_partitions(model: &TreeStructuredModel, var: &str) -> Result<ClusterSet> {
    model.cluster(var).cloned()
}

/// One entry of the long-format coefficient path table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub step: usize,
    pub parameter: String,
    pub value: f64,
}

/// Coefficients of every step, in long format. Parameters follow the column
/// order of the last step; a parameter not yet in the model is reported as 0.
pub fn coefficient_paths(trace: &SplitTrace) -> Vec<PathRow> {
    let Some(last) = trace.steps.last() else {
        return Vec::new();
    };
    let mut rows = Vec::with_capacity(trace.steps.len() * last.names.len());
    for step in &trace.steps {
        for name in &last.names {
            let value = step
                .names
                .iter()
                .position(|n| n == name)
                .map(|i| step.coefficients[i])
                .unwrap_or(0.0);
            rows.push(PathRow {
                step: step.step,
                parameter: name.clone(),
                value,
            });
        }
    }
    rows
}
