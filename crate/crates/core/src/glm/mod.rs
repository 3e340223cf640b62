//! Exponential-family GLM engine: penalized IRLS, deviance and tests.

mod family;
mod fit;
pub mod linalg;

pub use family::{Family, MU_EPS};
pub use fit::{
    fit_glm, fit_glm_with, predict_response, predictive_deviance, GlmFit, IrlsOptions, Penalty,
};
pub use test::{chi_square_sf, lr_test, wald_test, TestKind, TestResult};
