use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::splits::{nominal_ordering_lenient, split_positions, split_set_for};
use super::{CategoryOrder, Column, ColumnData, Dataset, Role, SplitSet, VariableKind};
use crate::error::{Error, Result};
use crate::smooth::{assemble_penalty, PenaltyBlock, SmoothTerm};

/// A tree-role variable together with its candidate splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitVariable {
    pub name: String,
    pub kind: VariableKind,
    pub splits: SplitSet,
}

impl SplitVariable {
    pub fn order(&self) -> Option<&CategoryOrder> {
        self.splits.order.as_ref()
    }

    /// Split coordinate of every row of `d` (rank for nominal variables).
    pub fn positions(&self, d: &Dataset) -> Result<Vec<f64>> {
        let col = d.column(&self.name)?;
        Ok(split_positions(col, self.order()))
    }
}

/// A linearly entering covariate. Categorical covariates expand to
/// indicator columns for levels `2..=k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTerm {
    pub name: String,
    pub kind: VariableKind,
    pub labels: Vec<String>,
}

impl LinearTerm {
    pub fn width(&self) -> usize {
        match self.kind.levels() {
            Some(k) => k - 1,
            None => 1,
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        match self.kind.levels() {
            Some(k) => (2..=k)
                .map(|c| format!("{}={}", self.name, self.labels.get(c - 1).cloned().unwrap_or_else(|| c.to_string())))
                .collect(),
            None => vec![self.name.clone()],
        }
    }
}

/// Everything needed to build design matrices for a fitted structure on any
/// compatible dataset: split variables with frozen orderings, linear terms,
/// and smooth bases frozen on the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTemplate {
    pub split_vars: Vec<SplitVariable>,
    pub linear: Vec<LinearTerm>,
    pub smooths: Vec<SmoothTerm>,
}

/// A design matrix with column bookkeeping.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: Array2<f64>,
    pub names: Vec<String>,
    pub n_splits: usize,
    pub linear_columns: Range<usize>,
    pub smooth_columns: Vec<Range<usize>>,
}

impl Design {
    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Penalty over the full coefficient vector for the given smoothing parameters.
    pub fn penalty(&self, template: &DesignTemplate, lambdas: &[f64]) -> Option<Array2<f64>> {
        if template.smooths.is_empty() {
            return None;
        }
        Some(assemble_penalty(self.ncols(), &self.penalty_blocks(template), lambdas))
    }

    pub fn penalty_blocks<'a>(&self, template: &'a DesignTemplate) -> Vec<PenaltyBlock<'a>> {
        self.smooth_columns
            .iter()
            .zip(&template.smooths)
            .map(|(r, t)| PenaltyBlock {
                columns: r.clone(),
                penalty: &t.penalty,
            })
            .collect()
    }
}

fn indicator_name(var: &SplitVariable, threshold: f64) -> String {
    match var.kind {
        VariableKind::Nominal { .. } => format!("{}>r{}", var.name, threshold),
        _ => format!("{}>{}", var.name, threshold),
    }
}

impl DesignTemplate {
    /// Derive the template from a training dataset. Nominal orderings are
    /// computed here, once per fitting run.
    pub fn from_dataset(d: &Dataset, basis_dim: usize) -> Result<DesignTemplate> {
        let mut split_vars = Vec::new();
        let mut linear = Vec::new();
        let mut smooths = Vec::new();
        for col in &d.columns {
            match col.role {
                Role::Tree => {
                    let order = match col.kind {
                        VariableKind::Nominal { .. } => Some(nominal_ordering_lenient(d, &col.name)?),
                        _ => None,
                    };
                    split_vars.push(SplitVariable {
                        name: col.name.clone(),
                        kind: col.kind,
                        splits: split_set_for(col, order),
                    });
                }
                Role::Linear => linear.push(LinearTerm {
                    name: col.name.clone(),
                    kind: col.kind,
                    labels: col.labels.clone(),
                }),
                Role::Smooth => {
                    let values = col.values().ok_or_else(|| {
                        Error::Schema(format!("smooth column '{}' must be metric", col.name))
                    })?;
                    smooths.push(SmoothTerm::new(col.name.clone(), values, basis_dim)?);
                }
            }
        }
        Ok(DesignTemplate {
            split_vars,
            linear,
            smooths,
        })
    }

    pub fn split_var_index(&self, name: &str) -> Result<usize> {
        self.split_vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Total candidate count `m_total` across tree variables.
    pub fn total_candidates(&self) -> usize {
        self.split_vars.iter().map(|v| v.splits.len()).sum()
    }

    /// Column count for a design with `n_splits` splits.
    pub fn width(&self, n_splits: usize) -> usize {
        1 + n_splits
            + self.linear.iter().map(LinearTerm::width).sum::<usize>()
            + self.smooths.iter().map(SmoothTerm::dim).sum::<usize>()
    }

    pub fn split_name(&self, var: usize, threshold: f64) -> String {
        indicator_name(&self.split_vars[var], threshold)
    }

    /// Assemble `[1 | I(z > c) per split | linear | smooth bases]` on `d`.
    ///
    /// `splits` holds (split-variable index, threshold) pairs in selection order.
    pub fn design(&self, d: &Dataset, splits: &[(usize, f64)]) -> Result<Design> {
        for (i, &(v, c)) in splits.iter().enumerate() {
            let var = self
                .split_vars
                .get(v)
                .ok_or_else(|| Error::InvalidArgument(format!("split variable index {v} out of range")))?;
            if !var.splits.contains(c) {
                return Err(Error::InvalidArgument(format!(
                    "{c} is not a candidate split of '{}'",
                    var.name
                )));
            }
            if splits[..i].iter().any(|&(w, t)| w == v && t == c) {
                return Err(Error::DuplicateSplit {
                    variable: var.name.clone(),
                    threshold: c,
                });
            }
        }
        let n = d.n();
        let p = self.width(splits.len());
        let mut x = Array2::<f64>::zeros((n, p));
        let mut names = Vec::with_capacity(p);
        x.column_mut(0).fill(1.0);
        names.push("(Intercept)".to_string());

        let mut positions: Vec<Option<Vec<f64>>> = vec![None; self.split_vars.len()];
        for (j, &(v, c)) in splits.iter().enumerate() {
            if positions[v].is_none() {
                positions[v] = Some(self.split_vars[v].positions(d)?);
            }
            let pos = positions[v].as_ref().unwrap();
            let mut col = x.column_mut(1 + j);
            for (i, &z) in pos.iter().enumerate() {
                col[i] = if z > c { 1.0 } else { 0.0 };
            }
            names.push(indicator_name(&self.split_vars[v], c));
        }

        let mut offset = 1 + splits.len();
        let lin_start = offset;
        for term in &self.linear {
            let col = d.column(&term.name)?;
            write_linear(&mut x, offset, term, col)?;
            names.extend(term.column_names());
            offset += term.width();
        }
        let linear_columns = lin_start..offset;

        let mut smooth_columns = Vec::with_capacity(self.smooths.len());
        for term in &self.smooths {
            let col = d.column(&term.variable)?;
            let values = col
                .values()
                .ok_or_else(|| Error::Schema(format!("smooth column '{}' must be metric", term.variable)))?;
            let block = term.columns(values);
            let w = block.ncols();
            x.slice_mut(ndarray::s![.., offset..offset + w]).assign(&block);
            names.extend((1..=w).map(|i| format!("s({}).{}", term.variable, i)));
            smooth_columns.push(offset..offset + w);
            offset += w;
        }
        debug_assert_eq!(offset, p);

        Ok(Design {
            x,
            names,
            n_splits: splits.len(),
            linear_columns,
            smooth_columns,
        })
    }
}

fn write_linear(x: &mut Array2<f64>, offset: usize, term: &LinearTerm, col: &Column) -> Result<()> {
    match (&col.data, term.kind.levels()) {
        (ColumnData::Codes(codes), Some(k)) => {
            for (i, &c) in codes.iter().enumerate() {
                if c as usize > k {
                    return Err(Error::UnknownLevel {
                        row: i + 1,
                        column: term.name.clone(),
                        value: c.to_string(),
                    });
                }
                if c >= 2 {
                    x[[i, offset + c as usize - 2]] = 1.0;
                }
            }
        }
        (ColumnData::Values(v), None) => {
            x.column_mut(offset).assign(&ndarray::ArrayView1::from(v.as_slice()));
        }
        _ => {
            return Err(Error::Schema(format!(
                "column '{}' does not match its fitted kind",
                term.name
            )))
        }
    }
    Ok(())
}

/// Design matrix for `splits` given as (variable name, threshold) pairs, with
/// smooth bases of the default dimension.
pub fn build_design(d: &Dataset, splits: &[(String, f64)]) -> Result<Design> {
    let template = DesignTemplate::from_dataset(d, crate::smooth::DEFAULT_BASIS_DIM)?;
    let resolved = splits
        .iter()
        .map(|(name, c)| Ok((template.split_var_index(name)?, *c)))
        .collect::<Result<Vec<_>>>()?;
    template.design(d, &resolved)
}
