//! Forward selection of splits across tree-role variables, stopping rules and
//! extraction of the fused level clusters.
//!
//! Every step refits the complete model (intercept, all previously selected
//! split indicators, linear and smooth terms) on all observations for each
//! remaining candidate split and keeps the candidate with the smallest
//! deviance. No offsets are carried between steps.

mod model;
mod path;
mod stop;

pub use model::{coefficient_paths, extract_partitions, ClusterCell, ClusterSet, NamedValue, PathRow, TreeStructuredModel};
pub use path::{fit_path, forward_step, FitContext, FitOptions, StepOutcome};
pub use stop::{apply_stop_rule, bonferroni_threshold, cv_fold_assignment, fit_model, information_criterion};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A selected split `I(z > threshold)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub variable: String,
    /// Index of the variable among the tree-role variables.
    pub var_index: usize,
    /// Threshold on the level code (ordinal), rank (nominal) or value (metric).
    pub threshold: f64,
    /// 1-based selection step.
    pub step: usize,
    /// Effect of the indicator in the fit it belongs to.
    pub effect: f64,
}

impl Split {
    pub fn key(&self) -> (usize, f64) {
        (self.var_index, self.threshold)
    }
}

/// One model along the forward path. Step 0 is the model without splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub split: Option<Split>,
    pub deviance: f64,
    pub log_likelihood: f64,
    pub edf: f64,
    /// LR statistic and p-value of the entering split against the previous step.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSplits,
    /// Every candidate split has been selected.
    Exhausted,
    /// Remaining candidates are all collinear with the current design.
    NoValidCandidate,
}

/// Ordered sequence of selected splits with per-step fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTrace {
    pub steps: Vec<TraceStep>,
    /// Total number of candidate splits over all tree variables.
    pub m_total: usize,
    pub max_splits: usize,
    pub stop_reason: StopReason,
}

impl SplitTrace {
    /// Number of selected splits.
    pub fn len(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn splits(&self) -> impl Iterator<Item = &Split> {
        self.steps.iter().filter_map(|s| s.split.as_ref())
    }

    pub fn split_keys(&self, upto: usize) -> Vec<(usize, f64)> {
        self.splits().take(upto).map(Split::key).collect()
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.steps.iter().skip(1).map(|s| s.p_value.unwrap_or(1.0)).collect()
    }
}

/// Rule choosing how many splits of the path to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Bonferroni-adjusted LR p-values at level alpha.
    PValue { alpha: f64 },
    Aic,
    Bic,
    /// k-fold cross-validated predictive deviance.
    Cv { folds: usize, seed: u64 },
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StopRule::PValue { alpha } if !(alpha > 0.0 && alpha < 1.0) => Err(Error::InvalidArgument(format!(
                "p-value level must lie in (0,1), got {alpha}"
            ))),
            StopRule::Cv { folds, .. } if folds < 2 => {
                Err(Error::InvalidArgument(format!("cross-validation needs k >= 2, got {folds}")))
            }
            _ => Ok(()),
        }
    }

    /// Parse `pvalue:0.05`, `aic`, `bic` or `cv:5`; `seed` feeds the CV folds.
    pub fn parse(text: &str, seed: u64) -> Result<StopRule> {
        let lower = text.trim().to_ascii_lowercase();
        let (head, arg) = match lower.split_once(':') {
            Some((h, a)) => (h.to_string(), Some(a.to_string())),
            None => (lower.clone(), None),
        };
        let bad = || Error::InvalidArgument(format!("cannot parse stop rule '{text}'"));
        let rule = match (head.as_str(), arg) {
            ("pvalue" | "p", Some(a)) => StopRule::PValue {
                alpha: a.parse().map_err(|_| bad())?,
            },
            ("aic", None) => StopRule::Aic,
            ("bic", None) => StopRule::Bic,
            ("cv", Some(a)) => StopRule::Cv {
                folds: a.parse().map_err(|_| bad())?,
                seed,
            },
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }

    /// Short label such as `p(0.05)` or `cv(5)`.
    pub fn label(&self) -> String {
        match self {
            StopRule::PValue { alpha } => format!("p({alpha})"),
            StopRule::Aic => "AIC".into(),
            StopRule::Bic => "BIC".into(),
            StopRule::Cv { folds, .. } => format!("cv({folds})"),
        }
    }
}
