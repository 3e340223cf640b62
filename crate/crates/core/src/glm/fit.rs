use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::linalg::{cholesky, weighted_gram, COLLINEAR_TOL};
use super::{Family, MU_EPS};
use crate::error::{Error, Result};

/// Quadratic penalty `lambda * betaᵀ S beta` on the coefficient vector.
#[derive(Debug, Clone, Copy)]
pub struct Penalty<'a> {
    /// Full p x p matrix (zero outside penalized blocks).
    pub matrix: &'a Array2<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Relative change in (penalized) deviance that counts as converged.
    pub tol: f64,
    /// Warm start coefficients.
    pub start: Option<Vec<f64>>,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 25,
            tol: 1e-8,
            start: None,
        }
    }
}

/// A fitted GLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub coefficients: Vec<f64>,
    /// Unpenalized deviance.
    pub deviance: f64,
    pub log_likelihood: f64,
    /// Pearson estimate for gaussian, 1 for binomial.
    pub dispersion: f64,
    /// `dispersion * (XᵀWX + S)^-1`.
    pub covariance: Array2<f64>,
    /// Effective degrees of freedom, `tr((XᵀWX + S)^-1 XᵀWX)`.
    pub edf: f64,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl GlmFit {
    pub fn n_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    /// Diagonal entries of `(XᵀWX + S)^-1 XᵀWX`, the per-coefficient edf.
    pub(crate) fn edf_diagonal(gram: &Array2<f64>, inv: &Array2<f64>) -> Vec<f64> {
        let prod = inv.dot(gram);
        (0..prod.nrows()).map(|i| prod[[i, i]]).collect()
    }
}

/// Fit a (penalized) GLM by iteratively reweighted least squares with the
/// default controls.
pub fn fit_glm(
    x: ArrayView2<f64>,
    y: &[f64],
    family: Family,
    penalty: Option<Penalty<'_>>,
) -> Result<GlmFit> {
    fit_glm_with(x, y, family, penalty, &IrlsOptions::default(), None)
}

/// IRLS with explicit options. `names` labels columns in singular-design errors.
pub fn fit_glm_with(
    x: ArrayView2<f64>,
    y: &[f64],
    family: Family,
    penalty: Option<Penalty<'_>>,
    opts: &IrlsOptions,
    names: Option<&[String]>,
) -> Result<GlmFit> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    let pen: Option<Array2<f64>> = match penalty {
        Some(pen) => {
            if pen.matrix.dim() != (p, p) {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: pen.matrix.nrows(),
                });
            }
            Some(pen.matrix * pen.lambda)
        }
        None => None,
    };
    let singular = |cols: Vec<usize>| Error::SingularDesign {
        columns: cols
            .into_iter()
            .map(|i| match names {
                Some(nm) => nm[i].clone(),
                None => format!("column {i}"),
            })
            .collect(),
    };
    let penalty_value = |beta: &Array1<f64>| -> f64 {
        match &pen {
            Some(s) => beta.dot(&s.dot(beta)),
            None => 0.0,
        }
    };

    let mut eta: Array1<f64>;
    let mut beta: Array1<f64>;
    let mut objective;
    match &opts.start {
        Some(start) if start.len() == p => {
            beta = Array1::from(start.clone());
            eta = x.dot(&beta);
            let mu: Vec<f64> = eta.iter().map(|&e| family.linkinv(e)).collect();
            objective = family.deviance(y, &mu) + penalty_value(&beta);
        }
        _ => {
            beta = Array1::zeros(p);
            eta = y.iter().map(|&v| family.link(family.initial_mu(v))).collect();
            objective = f64::INFINITY;
        }
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut deviance = objective;
    while iterations < opts.max_iter {
        iterations += 1;
        let mu: Vec<f64> = eta.iter().map(|&e| family.linkinv(e)).collect();
        let mut w = Vec::with_capacity(n);
        let mut z = Array1::<f64>::zeros(n);
        for i in 0..n {
            let d = family.mu_eta(mu[i]);
            let wi = d * d / family.variance(mu[i]);
            w.push(wi);
            z[i] = eta[i] + (y[i] - mu[i]) / d;
        }
        let mut a = weighted_gram(x, &w);
        if let Some(s) = &pen {
            a += s;
        }
        let wz: Array1<f64> = z.iter().zip(&w).map(|(zi, wi)| zi * wi).collect();
        let b = x.t().dot(&wz);
        let chol = cholesky(a.view(), COLLINEAR_TOL).map_err(singular)?;
        let mut beta_new = chol.solve(b.view());

        let mut eta_new = x.dot(&beta_new);
        let mut mu_new: Vec<f64> = eta_new.iter().map(|&e| family.linkinv(e)).collect();
        let mut dev_new = family.deviance(y, &mu_new);
        let mut obj_new = dev_new + penalty_value(&beta_new);

        // Step halving guards the binomial iterations against overshoot.
        if objective.is_finite() {
            let mut halvings = 0;
            while obj_new > objective * (1.0 + 1e-12) + 1e-12 && halvings < 30 {
                beta_new = (&beta_new + &beta) * 0.5;
                eta_new = x.dot(&beta_new);
                mu_new = eta_new.iter().map(|&e| family.linkinv(e)).collect();
                dev_new = family.deviance(y, &mu_new);
                obj_new = dev_new + penalty_value(&beta_new);
                halvings += 1;
            }
        }

        let change = (obj_new - objective).abs() / (obj_new.abs() + 0.1);
        beta = beta_new;
        eta = eta_new;
        deviance = dev_new;
        let first_cold = !objective.is_finite();
        objective = obj_new;
        if family == Family::Gaussian {
            // Identity link with unit weights: a single solve is exact.
            converged = true;
            break;
        }
        if !first_cold && change < opts.tol {
            converged = true;
            break;
        }
    }

    // Curvature at the final estimate.
    let mu: Vec<f64> = eta.iter().map(|&e| family.linkinv(e)).collect();
    if family == Family::Binomial && mu.iter().any(|&m| m <= MU_EPS * 1.5 || m >= 1.0 - MU_EPS * 1.5) {
        // Fitted probabilities at the clamp: the MLE does not exist.
        converged = false;
    }
    let w: Vec<f64> = mu
        .iter()
        .map(|&m| {
            let d = family.mu_eta(m);
            d * d / family.variance(m)
        })
        .collect();
    let gram = weighted_gram(x, &w);
    let mut a = gram.clone();
    if let Some(s) = &pen {
        a += s;
    }
    let inv = cholesky(a.view(), COLLINEAR_TOL).map_err(singular)?.inverse();
    let edf: f64 = GlmFit::edf_diagonal(&gram, &inv).iter().sum();

    let dispersion = match family {
        Family::Gaussian => {
            let resid_df = n as f64 - edf;
            if resid_df > 0.0 {
                deviance / resid_df
            } else {
                f64::NAN
            }
        }
        Family::Binomial => 1.0,
    };
    let covariance = if dispersion.is_finite() {
        inv * dispersion
    } else {
        inv
    };

    Ok(GlmFit {
        family,
        coefficients: beta.to_vec(),
        deviance,
        log_likelihood: family.log_likelihood(y, &mu),
        dispersion,
        covariance,
        edf,
        n_obs: n,
        iterations,
        converged,
    })
}

/// Linear predictor and mean for new rows.
pub fn predict_response(fit: &GlmFit, x_new: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if x_new.ncols() != fit.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.coefficients.len(),
            got: x_new.ncols(),
        });
    }
    let beta = Array1::from(fit.coefficients.clone());
    let eta = x_new.dot(&beta).to_vec();
    let mu = eta.iter().map(|&e| fit.family.linkinv(e)).collect();
    Ok((eta, mu))
}

/// Sum of deviance contributions of held-out responses at the predicted means.
pub fn predictive_deviance(fit: &GlmFit, x_holdout: ArrayView2<f64>, y_holdout: &[f64]) -> Result<f64> {
    if x_holdout.nrows() != y_holdout.len() {
        return Err(Error::DimensionMismatch {
            expected: x_holdout.nrows(),
            got: y_holdout.len(),
        });
    }
    let (_, mu) = predict_response(fit, x_holdout)?;
    Ok(fit.family.deviance(y_holdout, &mu))
}
