use super::matrix::{axpy, dot, norm, Matrix};
use crate::error::Result;

/// Thin singular value decomposition `a = u · diag(sigma) · vᵀ`.
///
/// With `r = min(rows, cols)`: `u` is `rows x r`, `sigma` has length `r` and is
/// sorted in non-increasing order, `v` is `cols x r`. No sign convention is
/// imposed on the singular vectors.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.v.transpose())
    }

    /// Number of singular values above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > tol).count()
    }

    /// The standard `max(rows, cols) * sigma_max * eps` cutoff.
    pub fn default_tolerance(&self) -> f64 {
        let dim = self.u.rows().max(self.v.rows()) as f64;
        dim * self.sigma.first().copied().unwrap_or(0.0) * f64::EPSILON
    }
}

const MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    a.ensure_finite("svd input")?;
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose());
        return Ok(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    Ok(svd_tall(a))
}

fn svd_tall(a: &Matrix) -> SvdResult {
    let (m, n) = a.shape();
    // Columns of `a` and of `v`, each stored contiguously.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sig: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    order.sort_by(|&i, &j| sig[j].total_cmp(&sig[i]));

    let smax = order.first().map_or(0.0, |&i| sig[i]);
    let tol = m.max(n) as f64 * smax * f64::EPSILON;
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if sig[j] > tol && sig[j] > 0.0 {
            ucols.push(cols[j].iter().map(|v| v / sig[j]).collect());
        } else {
            ucols.push(vec![0.0; m]);
            pending.push(slot);
        }
    }
    complete_orthonormal(&mut ucols, &pending, m);

    let sigma: Vec<f64> = order.iter().map(|&j| sig[j]).collect();
    let u = Matrix::from_fn(m, n, |i, k| ucols[k][i]);
    let v = Matrix::from_fn(n, n, |i, k| vcols[order[k]][i]);
    SvdResult { u, sigma, v }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the columns listed in `pending` with unit vectors orthogonal to all others.
fn complete_orthonormal(cols: &mut [Vec<f64>], pending: &[usize], dim: usize) {
    let mut candidate = 0;
    for &slot in pending {
        loop {
            assert!(
                candidate < dim,
                "orthonormal completion ran out of basis vectors"
            );
            let mut v = vec![0.0; dim];
            v[candidate] = 1.0;
            candidate += 1;
            // Two Gram-Schmidt passes.
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == slot {
                        continue;
                    }
                    let proj = dot(&v, c);
                    axpy(-proj, c, &mut v);
                }
            }
            let nv = norm(&v);
            if nv > 1e-6 {
                v.iter_mut().for_each(|x| *x /= nv);
                cols[slot] = v;
                break;
            }
        }
    }
}
