//! Tree-structured clustering of categorical predictors in generalized linear
//! and additive models.
//!
//! Categorical predictors enter the predictor through step functions whose
//! levels are fused into clusters by forward selection of splits, while other
//! covariates enter linearly or as penalized smooth terms. The crate provides
//! the fitting algorithm with several stopping rules, bootstrap stability
//! analysis of the resulting clusters, and a simulation harness.

// `!(a > b)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod error;
pub mod exec;
pub mod glm;
pub mod output;
pub mod simulation;
pub mod smooth;
pub mod tree;

pub use data::{Dataset, Role, VariableKind};
pub use error::{Error, Result};
pub use exec::Execution;
pub use glm::{Family, GlmFit};
pub use tree::{StopRule, TreeStructuredModel};
