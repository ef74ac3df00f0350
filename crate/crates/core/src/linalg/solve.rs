use super::matrix::Matrix;
use super::svd::svd;
use crate::error::{invalid, Error, Result};

/// Moore–Penrose pseudoinverse via SVD. Singular values `<= tol` are treated as
/// zero; `None` selects `max(rows, cols) * sigma_max * eps`.
pub fn pinv(a: &Matrix, tol: Option<f64>) -> Result<Matrix> {
    if let Some(t) = tol {
        if !(t >= 0.0) {
            return Err(invalid(format!("pinv tolerance must be >= 0, got {t}")));
        }
    }
    let s = svd(a)?;
    let tol = tol.unwrap_or_else(|| s.default_tolerance());
    let (m, n) = a.shape();
    let mut out = Matrix::zeros(n, m);
    for (k, &sk) in s.sigma.iter().enumerate() {
        if sk <= tol || sk == 0.0 {
            continue;
        }
        let inv = 1.0 / sk;
        for i in 0..n {
            let vik = s.v[(i, k)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..m {
                out[(i, j)] += vik * s.u[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Minimum-norm least-squares solution `pinv(a) · b`.
pub fn lstsq(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows() != b.len() {
        return Err(Error::Shape(format!(
            "lstsq: {} rows vs {} targets",
            a.rows(),
            b.len()
        )));
    }
    Ok(pinv(a, None)?.matvec(b))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape("cholesky of a non-square matrix".into()));
    }
    a.ensure_finite("cholesky input")?;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `l lᵀ x = b` given the Cholesky factor `l`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    assert_eq!(b.len(), n);
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Solves a symmetric positive semi-definite system. Falls back to the
/// pseudoinverse when the matrix is not numerically positive definite.
pub fn solve_psd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    match cholesky(a) {
        Ok(l) => Ok(cholesky_solve(&l, b)),
        Err(Error::NotPositiveDefinite) => Ok(pinv(a, None)?.matvec(b)),
        Err(e) => Err(e),
    }
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    let l = cholesky(a)?;
    let n = a.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        inv.set_col(j, &cholesky_solve(&l, &e));
    }
    Ok(inv)
}
