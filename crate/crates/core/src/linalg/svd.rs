//! One-sided (Hestenes) Jacobi SVD for small dense matrices.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Largest dimension accepted by [`svd`].
pub const MAX_SVD_DIM: usize = 64;
/// Sweep cap before reporting non-convergence.
pub const MAX_SWEEPS: usize = 100;
/// Columns `i, j` count as orthogonal once `|a_i . a_j| <= ORTH_TOL * |a_i| |a_j|`.
const ORTH_TOL: f64 = 1e-15;

/// Full SVD `M = U diag(sigma) V^T` with square orthogonal factors.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// `U diag(sigma) V^T` restricted to the leading `k` triplets.
    pub fn reconstruct_rank(&self, k: usize) -> Matrix {
        let (n, m) = (self.u.rows(), self.v.rows());
        let k = k.min(self.sigma.len());
        Matrix::from_fn(n, m, |i, j| {
            (0..k)
                .map(|l| self.u.get(i, l) * self.sigma[l] * self.v.get(j, l))
                .sum()
        })
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_rank(self.sigma.len())
    }

    /// Count of singular values above `rel_tol * sigma_1`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let s1 = self.sigma.first().copied().unwrap_or(0.0);
        if s1 == 0.0 {
            return 0;
        }
        self.sigma.iter().filter(|&&s| s > rel_tol * s1).count()
    }
}

/// Singular value decomposition of a matrix with at most 64 rows and columns.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    let (n, p) = m.shape();
    if n > MAX_SVD_DIM || p > MAX_SVD_DIM {
        return Err(Error::dim(
            "svd",
            format!("{n}x{p} exceeds {MAX_SVD_DIM}x{MAX_SVD_DIM}"),
        ));
    }
    if n >= p {
        let (u, sigma, v) = tall_svd(m)?;
        Ok(normalize_signs(u, sigma, v))
    } else {
        let (u_t, sigma, v_t) = tall_svd(&m.transpose())?;
        Ok(normalize_signs(v_t, sigma, u_t))
    }
}

/// Jacobi on the columns of a tall (`n >= p`) matrix.
fn tall_svd(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (n, p) = m.shape();
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| m.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..p).map(|j| unit(p, j)).collect();

    let mut converged = false;
    let mut residual = 0.0f64;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        residual = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 || gamma.abs() <= ORTH_TOL * scale {
                    continue;
                }
                residual = residual.max(gamma.abs() / scale);
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, i, j, c, s);
                rotate(&mut vcols, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    // Stable: equal values keep Jacobi output order.
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let s_max = sigma.first().copied().unwrap_or(0.0);
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        if sigma[k] > 0.0 && sigma[k] > 1e-13 * s_max {
            ucols.push(cols[j].iter().map(|x| x / sigma[k]).collect());
        } else {
            break;
        }
    }
    complete_basis(&mut ucols, n);

    let u = Matrix::from_fn(n, n, |i, k| ucols[k][i]);
    let v = Matrix::from_fn(p, p, |i, k| vcols[order[k]][i]);
    Ok((u, sigma, v))
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    for (x, y) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Extends an orthonormal set to a basis of R^n by Gram-Schmidt, each time
/// taking the standard basis vector with the largest residual.
fn complete_basis(cols: &mut Vec<Vec<f64>>, n: usize) {
    let residual = |cols: &[Vec<f64>], e: usize| {
        let mut v = unit(n, e);
        // two passes of classical GS
        for _ in 0..2 {
            for c in cols {
                let d = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
            }
        }
        v
    };
    while cols.len() < n {
        let mut v = (0..n)
            .map(|e| residual(cols, e))
            .max_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
            .expect("n > 0");
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        cols.push(v);
    }
}

/// Flips each singular pair so the first non-negligible entry of `u_k` is positive.
fn normalize_signs(u: Matrix, sigma: Vec<f64>, v: Matrix) -> SvdResult {
    let n = u.rows();
    let p = v.rows();
    let flips: Vec<f64> = (0..n)
        .map(|k| {
            let first = (0..n)
                .map(|i| u.get(i, k))
                .find(|x| x.abs() > 1e-12)
                .unwrap_or(0.0);
            if first < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    let u = Matrix::from_fn(n, n, |i, k| flips[k] * u.get(i, k));
    let v = Matrix::from_fn(
        p,
        p,
        |i, k| if k < n { flips[k] } else { 1.0 } * v.get(i, k),
    );
    SvdResult { u, sigma, v }
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
