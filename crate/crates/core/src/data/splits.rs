use serde::{Deserialize, Serialize};

use super::{Column, ColumnData, Dataset, Role, VariableKind};
use crate::error::{Error, Result};

/// Linearization of nominal levels by increasing mean response.
///
/// `levels_by_rank[r - 1]` is the level code at rank `r`; `rank_of[c - 1]` is
/// the rank of level code `c`. Both are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryOrder {
    pub levels_by_rank: Vec<u32>,
    pub rank_of: Vec<u32>,
    /// Mean response per level code, used to build the order.
    pub means: Vec<f64>,
}

impl CategoryOrder {
    pub fn from_means(means: Vec<f64>) -> Self {
        let mut levels: Vec<u32> = (1..=means.len() as u32).collect();
        levels.sort_by(|&a, &b| {
            means[a as usize - 1]
                .total_cmp(&means[b as usize - 1])
                .then(a.cmp(&b))
        });
        let mut rank_of = vec![0u32; means.len()];
        for (r, &lvl) in levels.iter().enumerate() {
            rank_of[lvl as usize - 1] = r as u32 + 1;
        }
        CategoryOrder {
            levels_by_rank: levels,
            rank_of,
            means,
        }
    }

    pub fn rank(&self, code: u32) -> u32 {
        self.rank_of[code as usize - 1]
    }

    pub fn level_at(&self, rank: u32) -> u32 {
        self.levels_by_rank[rank as usize - 1]
    }

    pub fn is_identity(&self) -> bool {
        self.levels_by_rank
            .iter()
            .enumerate()
            .all(|(i, &l)| l as usize == i + 1)
    }
}

fn level_means(y: &[f64], codes: &[u32], k: usize) -> (Vec<f64>, Vec<usize>) {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&c, &v) in codes.iter().zip(y) {
        sums[c as usize - 1] += v;
        counts[c as usize - 1] += 1;
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { f64::NAN })
        .collect();
    (means, counts)
}

fn nominal_column<'a>(d: &'a Dataset, var: &str) -> Result<(&'a Column, &'a [u32], usize)> {
    let col = d.column(var)?;
    match (col.kind, &col.data) {
        (VariableKind::Nominal { levels }, ColumnData::Codes(codes)) => Ok((col, codes, levels)),
        _ => Err(Error::InvalidArgument(format!("'{var}' is not nominal"))),
    }
}

/// Order nominal levels by mean response (observed proportion for binary
/// outcomes); ties go to the smaller level code. Every level must be observed.
pub fn nominal_ordering(d: &Dataset, var: &str) -> Result<CategoryOrder> {
    let (col, codes, k) = nominal_column(d, var)?;
    let (means, counts) = level_means(&d.response, codes, k);
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyLevel {
            column: var.to_string(),
            level: col.label(empty as u32 + 1),
        });
    }
    Ok(CategoryOrder::from_means(means))
}

/// As [`nominal_ordering`], but levels absent from the data (possible in
/// resamples and CV folds) are placed at the overall mean response.
pub fn nominal_ordering_lenient(d: &Dataset, var: &str) -> Result<CategoryOrder> {
    let (_, codes, k) = nominal_column(d, var)?;
    let (mut means, _) = level_means(&d.response, codes, k);
    let overall = if d.n() > 0 {
        d.response.iter().sum::<f64>() / d.n() as f64
    } else {
        0.0
    };
    for m in &mut means {
        if m.is_nan() {
            *m = overall;
        }
    }
    Ok(CategoryOrder::from_means(means))
}

/// Candidate thresholds `c` for indicators `I(z > c)` on one tree variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub variable: String,
    /// Strictly increasing. For nominal variables these are rank thresholds.
    pub thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<CategoryOrder>,
}

impl SplitSet {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn contains(&self, threshold: f64) -> bool {
        self.thresholds.contains(&threshold)
    }
}

/// Per-row split coordinate: code for ordinal, rank for nominal, value otherwise.
pub(crate) fn split_positions(col: &Column, order: Option<&CategoryOrder>) -> Vec<f64> {
    match (&col.data, order) {
        (ColumnData::Codes(codes), Some(o)) => codes.iter().map(|&c| o.rank(c) as f64).collect(),
        (ColumnData::Codes(codes), None) => codes.iter().map(|&c| c as f64).collect(),
        (ColumnData::Values(v), _) => v.clone(),
    }
}

pub(crate) fn split_set_for(col: &Column, order: Option<CategoryOrder>) -> SplitSet {
    let positions = split_positions(col, order.as_ref());
    let mut distinct = positions.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let thresholds = match col.kind {
        VariableKind::Nominal { levels } | VariableKind::Ordinal { levels } => {
            // Thresholds 1..k-1 whose indicator actually varies on the data.
            let (lo, hi) = match (distinct.first(), distinct.last()) {
                (Some(&lo), Some(&hi)) => (lo, hi),
                _ => (0.0, 0.0),
            };
            (1..levels)
                .map(|c| c as f64)
                .filter(|&c| c >= lo && c < hi)
                .collect()
        }
        VariableKind::Metric | VariableKind::Binary => {
            distinct.pop();
            distinct
        }
    };
    SplitSet {
        variable: col.name.clone(),
        thresholds,
        order,
    }
}

/// Enumerate the candidate splits of a tree-role variable.
///
/// The maximal threshold (level `k`, or the largest observed value) is never a
/// candidate because its indicator is identically zero. A constant column
/// yields an empty set.
pub fn candidate_splits(d: &Dataset, var: &str) -> Result<SplitSet> {
    let col = d.column(var)?;
    if col.role != Role::Tree {
        return Err(Error::InvalidArgument(format!("'{var}' does not have the tree role")));
    }
    let order = match col.kind {
        VariableKind::Nominal { .. } => Some(nominal_ordering_lenient(d, var)?),
        _ => None,
    };
    Ok(split_set_for(col, order))
}
