//! Penalized cubic regression splines for smooth covariate effects.
//!
//! A basis of dimension `K` is parameterized by the function values at `K`
//! knots; the spline is the natural cubic interpolant of those values. The
//! penalty `βᵀSβ` equals the integrated squared second derivative of that
//! interpolant, so affine functions are unpenalized.
//!
//! Inside a model the term is centered: the basis is reduced to `K - 1`
//! columns orthogonal to the intercept on the training data, and the penalty is
//! rescaled so that a single smoothing-parameter grid works across covariate
//! scales.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::linalg::{cholesky, symmetric_eigenvalues, COLLINEAR_TOL};
use crate::glm::{fit_glm, Family, Penalty};

pub const DEFAULT_BASIS_DIM: usize = 10;
pub const GRID_POINTS: usize = 40;
pub const LAMBDA_MIN: f64 = 1e-4;
pub const LAMBDA_MAX: f64 = 1e6;
/// Points in the exported (x, f(x)) table.
pub const EXPORT_POINTS: usize = 200;

/// Log-spaced smoothing-parameter grid, ascending.
pub fn lambda_grid() -> Vec<f64> {
    let (lo, hi) = (LAMBDA_MIN.log10(), LAMBDA_MAX.log10());
    (0..GRID_POINTS)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64))
        .collect()
}

/// Cubic regression spline basis with knots at quantiles of the distinct data values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub knots: Vec<f64>,
    /// Maps knot values to second derivatives at the knots (zero at the ends).
    second_deriv: Array2<f64>,
    /// Integrated squared second derivative penalty, `DᵀB⁻¹D`.
    pub penalty: Array2<f64>,
}

/// Build a basis of dimension `dim` for the observed values `x`.
pub fn build_spline_basis(x: &[f64], dim: usize) -> Result<SplineBasis> {
    if dim < 3 {
        return Err(Error::InvalidArgument(format!(
            "spline basis dimension must be at least 3, got {dim}"
        )));
    }
    let mut distinct: Vec<f64> = x.to_vec();
    if distinct.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite covariate value".into()));
    }
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < dim {
        return Err(Error::TooFewDistinct {
            variable: String::new(),
            needed: dim,
            found: distinct.len(),
        });
    }
    let m = distinct.len();
    let knots: Vec<f64> = (0..dim)
        .map(|j| {
            let h = (m - 1) as f64 * j as f64 / (dim - 1) as f64;
            let lo = h.floor() as usize;
            if lo + 1 >= m {
                distinct[m - 1]
            } else {
                distinct[lo] + (h - lo as f64) * (distinct[lo + 1] - distinct[lo])
            }
        })
        .collect();

    let k = dim;
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let mut d = Array2::<f64>::zeros((k - 2, k));
    let mut b = Array2::<f64>::zeros((k - 2, k - 2));
    for i in 0..k - 2 {
        d[[i, i]] = 1.0 / h[i];
        d[[i, i + 1]] = -1.0 / h[i] - 1.0 / h[i + 1];
        d[[i, i + 2]] = 1.0 / h[i + 1];
        b[[i, i]] = (h[i] + h[i + 1]) / 3.0;
        if i + 1 < k - 2 {
            b[[i, i + 1]] = h[i + 1] / 6.0;
            b[[i + 1, i]] = h[i + 1] / 6.0;
        }
    }
    let chol = cholesky(b.view(), 0.0).map_err(|_| Error::InvalidArgument("degenerate knot spacing".into()))?;
    let mut binv_d = Array2::<f64>::zeros((k - 2, k));
    for j in 0..k {
        binv_d.column_mut(j).assign(&chol.solve(d.column(j)));
    }
    let mut second_deriv = Array2::<f64>::zeros((k, k));
    second_deriv.slice_mut(s![1..k - 1, ..]).assign(&binv_d);
    let mut penalty = d.t().dot(&binv_d);
    symmetrize(&mut penalty);
    Ok(SplineBasis {
        knots,
        second_deriv,
        penalty,
    })
}

fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

impl SplineBasis {
    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    fn row_into(&self, x: f64, out: &mut [f64]) {
        let kn = &self.knots;
        let k = kn.len();
        let f = &self.second_deriv;
        out.iter_mut().for_each(|v| *v = 0.0);
        if x < kn[0] || x > kn[k - 1] {
            // Linear extrapolation beyond the boundary knots.
            let (end, j, dx) = if x < kn[0] { (0, 0, x - kn[0]) } else { (k - 1, k - 2, x - kn[k - 1]) };
            let hj = kn[j + 1] - kn[j];
            out[end] += 1.0;
            out[j] -= dx / hj;
            out[j + 1] += dx / hj;
            let (wl, wr) = if end == 0 { (-hj / 3.0, -hj / 6.0) } else { (hj / 6.0, hj / 3.0) };
            for c in 0..k {
                out[c] += dx * (wl * f[[j, c]] + wr * f[[j + 1, c]]);
            }
            return;
        }
        let j = match kn.partition_point(|&t| t <= x) {
            0 => 0,
            p => (p - 1).min(k - 2),
        };
        let hj = kn[j + 1] - kn[j];
        let left = kn[j + 1] - x;
        let right = x - kn[j];
        out[j] += left / hj;
        out[j + 1] += right / hj;
        let cm = (left.powi(3) / hj - hj * left) / 6.0;
        let cp = (right.powi(3) / hj - hj * right) / 6.0;
        for c in 0..k {
            out[c] += cm * f[[j, c]] + cp * f[[j + 1, c]];
        }
    }

    /// Basis matrix, one row per value.
    pub fn evaluate(&self, x: &[f64]) -> Array2<f64> {
        let k = self.dim();
        let mut out = Array2::<f64>::zeros((x.len(), k));
        let mut row = vec![0.0; k];
        for (i, &v) in x.iter().enumerate() {
            self.row_into(v, &mut row);
            out.row_mut(i).assign(&Array1::from(row.clone()));
        }
        out
    }

    /// `βᵀSβ` for knot-value coefficients β.
    pub fn penalty_form(&self, beta: &[f64]) -> f64 {
        let b = Array1::from(beta.to_vec());
        b.dot(&self.penalty.dot(&b))
    }
}

/// A centered smooth term as it enters a design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub variable: String,
    pub basis: SplineBasis,
    /// `K x (K-1)` map from constrained to knot-value coefficients.
    constraint: Array2<f64>,
    /// Scaled penalty on the constrained coefficients.
    pub penalty: Array2<f64>,
}

impl SmoothTerm {
    pub fn new(variable: impl Into<String>, x: &[f64], dim: usize) -> Result<SmoothTerm> {
        let variable = variable.into();
        let basis = build_spline_basis(x, dim).map_err(|e| match e {
            Error::TooFewDistinct { needed, found, .. } => Error::TooFewDistinct {
                variable: variable.clone(),
                needed,
                found,
            },
            other => other,
        })?;
        let raw = basis.evaluate(x);
        let sums: Array1<f64> = raw.sum_axis(ndarray::Axis(0));
        let constraint = null_space_of_vector(&sums);
        let cols = raw.dot(&constraint);
        let mut penalty = constraint.t().dot(&basis.penalty).dot(&constraint);
        symmetrize(&mut penalty);

        let gram = cols.t().dot(&cols);
        let mean_diag = (0..gram.nrows()).map(|i| gram[[i, i]]).sum::<f64>() / gram.nrows() as f64;
        let ev = symmetric_eigenvalues(penalty.view());
        let top = ev.last().copied().unwrap_or(0.0);
        let smallest_positive = ev.iter().copied().find(|&e| e > 1e-8 * top).unwrap_or(top);
        if smallest_positive > 0.0 && mean_diag > 0.0 {
            penalty *= mean_diag / smallest_positive;
        }
        Ok(SmoothTerm {
            variable,
            basis,
            constraint,
            penalty,
        })
    }

    /// Number of design columns.
    pub fn dim(&self) -> usize {
        self.constraint.ncols()
    }

    pub fn columns(&self, x: &[f64]) -> Array2<f64> {
        self.basis.evaluate(x).dot(&self.constraint)
    }

    /// Fitted function values for constrained coefficients.
    pub fn evaluate(&self, coefficients: &[f64], x: &[f64]) -> Vec<f64> {
        self.columns(x).dot(&Array1::from(coefficients.to_vec())).to_vec()
    }

    /// Evenly spaced (x, f(x)) pairs across the knot range.
    pub fn grid(&self, coefficients: &[f64], points: usize) -> Vec<(f64, f64)> {
        let lo = self.basis.knots[0];
        let hi = *self.basis.knots.last().unwrap();
        let xs: Vec<f64> = (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points.max(2) - 1) as f64)
            .collect();
        let fs = self.evaluate(coefficients, &xs);
        xs.into_iter().zip(fs).collect()
    }
}

/// Orthonormal basis (columns) of the complement of `v`, via a Householder reflection.
fn null_space_of_vector(v: &Array1<f64>) -> Array2<f64> {
    let k = v.len();
    let norm = v.dot(v).sqrt();
    let mut u = v.clone();
    if norm == 0.0 {
        return Array2::eye(k).slice(s![.., 1..]).to_owned();
    }
    let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    u[0] += sign * norm;
    let uu = u.dot(&u);
    let mut h = Array2::<f64>::eye(k);
    for i in 0..k {
        for j in 0..k {
            h[[i, j]] -= 2.0 * u[i] * u[j] / uu;
        }
    }
    h.slice(s![.., 1..]).to_owned()
}

/// Fitted smooth term of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTermFit {
    pub variable: String,
    pub term: SmoothTerm,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub edf: f64,
    /// (x, f(x)) over [`EXPORT_POINTS`] points for plotting.
    pub grid: Vec<(f64, f64)>,
}

/// Penalized columns of one smooth term inside a larger design.
#[derive(Debug, Clone)]
pub struct PenaltyBlock<'a> {
    pub columns: Range<usize>,
    pub penalty: &'a Array2<f64>,
}

/// Block-diagonal penalty with one smoothing parameter per block.
pub fn assemble_penalty(p: usize, blocks: &[PenaltyBlock<'_>], lambdas: &[f64]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((p, p));
    for (blk, &lam) in blocks.iter().zip(lambdas) {
        let r = blk.columns.clone();
        let mut sub = out.slice_mut(s![r.clone(), r]);
        sub.scaled_add(lam, blk.penalty);
    }
    out
}

/// Generalized cross-validation score `n D / (n - edf)^2`.
pub fn gcv_score(deviance: f64, edf: f64, n: usize) -> f64 {
    let n = n as f64;
    let denom = n - edf;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        n * deviance / (denom * denom)
    }
}

/// Pick each block's smoothing parameter from the grid by GCV, one block at a
/// time with the others held at their current values. Grid argmin ties go to
/// the smaller lambda; a flat profile therefore returns the smallest.
pub fn select_lambdas(
    x: ArrayView2<f64>,
    y: &[f64],
    family: Family,
    blocks: &[PenaltyBlock<'_>],
    current: &[f64],
    deviance_cap: Option<f64>,
) -> Result<Vec<f64>> {
    let grid = lambda_grid();
    let mut lambdas = current.to_vec();
    for b in 0..blocks.len() {
        let mut best: Option<(f64, f64)> = None;
        let keep = lambdas[b];
        // Largest lambda first: near-ties on a flat GCV curve go to the
        // smoother fit, independent of summation order.
        for &lam in grid.iter().rev() {
            lambdas[b] = lam;
            let pen = assemble_penalty(x.ncols(), blocks, &lambdas);
            let fit = fit_glm(x, y, family, Some(Penalty { matrix: &pen, lambda: 1.0 }))?;
            if deviance_cap.is_some_and(|cap| fit.deviance > cap) {
                continue;
            }
            let score = gcv_score(fit.deviance, fit.edf, y.len());
            match best {
                Some((s, _)) if !(score < s - 1e-9 * s.abs()) => {}
                _ => best = Some((score, lam)),
            }
        }
        lambdas[b] = match best {
            Some((_, l)) => l,
            None if deviance_cap.is_some() => keep,
            None => grid[0],
        };
    }
    Ok(lambdas)
}

/// Smoothing parameter for a single smooth term next to fixed columns.
pub fn select_smoothing(
    x_fixed: ArrayView2<f64>,
    term: &SmoothTerm,
    covariate: &[f64],
    y: &[f64],
    family: Family,
) -> Result<f64> {
    let x = stack_with_term(x_fixed, term, covariate);
    let p0 = x_fixed.ncols();
    let blocks = [PenaltyBlock {
        columns: p0..p0 + term.dim(),
        penalty: &term.penalty,
    }];
    Ok(select_lambdas(x.view(), y, family, &blocks, &[1.0], None)?[0])
}

/// Penalized fit of fixed columns plus one smooth term at a given lambda.
pub fn fit_with_smooth(
    x_fixed: ArrayView2<f64>,
    term: &SmoothTerm,
    covariate: &[f64],
    y: &[f64],
    family: Family,
    lambda: f64,
) -> Result<crate::glm::GlmFit> {
    let x = stack_with_term(x_fixed, term, covariate);
    let p0 = x_fixed.ncols();
    let blocks = [PenaltyBlock {
        columns: p0..p0 + term.dim(),
        penalty: &term.penalty,
    }];
    let pen = assemble_penalty(x.ncols(), &blocks, &[lambda]);
    fit_glm(x.view(), y, family, Some(Penalty { matrix: &pen, lambda: 1.0 }))
}

fn stack_with_term(x_fixed: ArrayView2<f64>, term: &SmoothTerm, covariate: &[f64]) -> Array2<f64> {
    let cols = term.columns(covariate);
    ndarray::concatenate(ndarray::Axis(1), &[x_fixed, cols.view()]).expect("row counts agree")
}

/// Effective degrees of freedom of the columns in `range`, given the fit's
/// penalized system.
pub(crate) fn block_edf(
    x: ArrayView2<f64>,
    weights: &[f64],
    penalty: &Array2<f64>,
    range: Range<usize>,
) -> f64 {
    let gram = crate::glm::linalg::weighted_gram(x, weights);
    let a = &gram + penalty;
    match cholesky(a.view(), COLLINEAR_TOL) {
        Ok(ch) => {
            let inv = ch.inverse();
            let diag = crate::glm::GlmFit::edf_diagonal(&gram, &inv);
            diag[range].iter().sum()
        }
        Err(_) => f64::NAN,
    }
}
