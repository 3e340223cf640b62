//! Typed tabular data: ingestion, candidate split enumeration and design
//! matrix assembly.

mod design;
mod ingest;
mod splits;

pub use design::{build_design, Design, DesignTemplate, LinearTerm, SplitVariable};
pub use ingest::{ingest_dataset, ColumnSpec, KindName, Schema};
pub use splits::{candidate_splits, nominal_ordering, nominal_ordering_lenient, CategoryOrder, SplitSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::Family;

/// Measurement scale of a predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum VariableKind {
    Nominal { levels: usize },
    Ordinal { levels: usize },
    Metric,
    Binary,
}

impl VariableKind {
    pub fn is_categorical(self) -> bool {
        matches!(self, VariableKind::Nominal { .. } | VariableKind::Ordinal { .. })
    }

    /// Level count for categorical kinds.
    pub fn levels(self) -> Option<usize> {
        match self {
            VariableKind::Nominal { levels } | VariableKind::Ordinal { levels } => Some(levels),
            _ => None,
        }
    }
}

/// How a column enters the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tree,
    Linear,
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    /// Level codes in `1..=k`.
    Codes(Vec<u32>),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: VariableKind,
    pub role: Role,
    pub data: ColumnData,
    /// Level labels in code order (code `c` has label `labels[c - 1]`).
    /// Empty for metric and binary columns.
    pub labels: Vec<String>,
}

impl Column {
    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Codes(c) => c.len(),
            ColumnData::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn codes(&self) -> Option<&[u32]> {
        match &self.data {
            ColumnData::Codes(c) => Some(c),
            ColumnData::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Values(v) => Some(v),
            ColumnData::Codes(_) => None,
        }
    }

    /// Numeric view of the column (codes as floats).
    pub fn numeric(&self) -> Vec<f64> {
        match &self.data {
            ColumnData::Codes(c) => c.iter().map(|&v| v as f64).collect(),
            ColumnData::Values(v) => v.clone(),
        }
    }

    pub fn label(&self, code: u32) -> String {
        self.labels
            .get(code as usize - 1)
            .cloned()
            .unwrap_or_else(|| code.to_string())
    }

    fn select(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Codes(c) => ColumnData::Codes(rows.iter().map(|&r| c[r]).collect()),
            ColumnData::Values(v) => ColumnData::Values(rows.iter().map(|&r| v[r]).collect()),
        };
        Column {
            name: self.name.clone(),
            kind: self.kind,
            role: self.role,
            data,
            labels: self.labels.clone(),
        }
    }
}

/// Immutable model input: a response and typed, role-tagged predictor columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub response_name: String,
    pub family: Family,
    pub response: Vec<f64>,
    pub columns: Vec<Column>,
}

impl Dataset {
    /// Assemble a dataset from already-coded columns, checking invariants.
    pub fn new(
        response_name: impl Into<String>,
        family: Family,
        response: Vec<f64>,
        columns: Vec<Column>,
    ) -> Result<Self> {
        let n = response.len();
        for (row, &y) in response.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::MissingValue {
                    row,
                    column: "response".into(),
                });
            }
            if family == Family::Binomial && y != 0.0 && y != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "binomial response must be 0/1, found {y} at row {row}"
                )));
            }
        }
        for col in &columns {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: col.len(),
                });
            }
            match (col.kind, &col.data) {
                (VariableKind::Nominal { levels } | VariableKind::Ordinal { levels }, ColumnData::Codes(codes)) => {
                    if levels < 2 {
                        return Err(Error::Schema(format!(
                            "column '{}' needs at least 2 levels",
                            col.name
                        )));
                    }
                    if let Some(row) = codes.iter().position(|&c| c == 0 || c as usize > levels) {
                        return Err(Error::UnknownLevel {
                            row,
                            column: col.name.clone(),
                            value: codes[row].to_string(),
                        });
                    }
                }
                (VariableKind::Binary, ColumnData::Values(v)) => {
                    if let Some(row) = v.iter().position(|&x| x != 0.0 && x != 1.0) {
                        return Err(Error::InvalidArgument(format!(
                            "binary column '{}' has value {} at row {row}",
                            col.name, v[row]
                        )));
                    }
                }
                (VariableKind::Metric, ColumnData::Values(v)) => {
                    if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::MissingValue {
                            row,
                            column: col.name.clone(),
                        });
                    }
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "column '{}' storage does not match its kind",
                        col.name
                    )))
                }
            }
            if col.role == Role::Smooth && col.kind != VariableKind::Metric {
                return Err(Error::Schema(format!(
                    "smooth role requires a metric column, '{}' is not",
                    col.name
                )));
            }
        }
        Ok(Dataset {
            response_name: response_name.into(),
            family,
            response,
            columns,
        })
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn columns_with_role(&self, role: Role) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(move |c| c.role == role)
    }

    /// Row subset (with repetition allowed, as in bootstrap resamples).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            response_name: self.response_name.clone(),
            family: self.family,
            response: rows.iter().map(|&r| self.response[r]).collect(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
        }
    }

    /// Same data with every tree-role column demoted out of the model.
    pub fn without_tree(&self) -> Dataset {
        let mut d = self.clone();
        d.columns.retain(|c| c.role != Role::Tree);
        d
    }
}
