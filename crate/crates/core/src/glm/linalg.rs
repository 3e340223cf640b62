//! Small dense kernels for the normal equations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Relative pivot tolerance below which a column is treated as collinear with
/// the columns before it.
pub const COLLINEAR_TOL: f64 = 1e-9;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

/// In-order Cholesky factorization that reports every column whose pivot
/// collapses relative to its own diagonal entry.
///
/// Columns are processed left to right, so when two columns are collinear the
/// later one is reported. The factorization never reorders columns, which
/// keeps the reported indices deterministic.
pub fn cholesky(a: ArrayView2<f64>, rel_tol: f64) -> Result<Cholesky, Vec<usize>> {
    let p = a.nrows();
    let mut l = Array2::<f64>::zeros((p, p));
    let mut dropped = Vec::new();
    for j in 0..p {
        let ajj = a[[j, j]];
        let mut d = ajj;
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(ajj > 0.0) || !(d > rel_tol * ajj) {
            dropped.push(j);
            continue;
        }
        let ljj = d.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..p {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    if dropped.is_empty() {
        Ok(Cholesky { l })
    } else {
        Err(dropped)
    }
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let p = self.dim();
        let mut z = b.to_owned();
        for i in 0..p {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[[i, k]] * z[k];
            }
            z[i] = s / self.l[[i, i]];
        }
        for i in (0..p).rev() {
            let mut s = z[i];
            for k in (i + 1)..p {
                s -= self.l[[k, i]] * z[k];
            }
            z[i] = s / self.l[[i, i]];
        }
        z
    }

    pub fn inverse(&self) -> Array2<f64> {
        let p = self.dim();
        let mut inv = Array2::<f64>::zeros((p, p));
        let mut e = Array1::<f64>::zeros(p);
        for j in 0..p {
            e.fill(0.0);
            e[j] = 1.0;
            let col = self.solve(e.view());
            inv.column_mut(j).assign(&col);
        }
        // Symmetrize away round-off.
        for i in 0..p {
            for j in (i + 1)..p {
                let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
                inv[[i, j]] = v;
                inv[[j, i]] = v;
            }
        }
        inv
    }
}

/// `Xᵀ diag(w) X`.
pub fn weighted_gram(x: ArrayView2<f64>, w: &[f64]) -> Array2<f64> {
    let mut xw = x.to_owned();
    for (mut row, &wi) in xw.rows_mut().into_iter().zip(w) {
        row *= wi;
    }
    x.t().dot(&xw)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.to_owned();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}
