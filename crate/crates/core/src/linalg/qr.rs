use super::matrix::{dot, norm, Matrix};
use crate::error::{invalid, Result};

/// Thin QR factorization: `q` is `rows x cols` with orthonormal columns, `r` is
/// `cols x cols` upper triangular with a non-negative diagonal.
#[derive(Clone, Debug)]
pub struct QrResult {
    pub q: Matrix,
    pub r: Matrix,
}

/// Householder QR of a tall (or square) matrix.
///
/// Rank-deficient input is allowed; the corresponding diagonal entries of `r`
/// come out as (numerically) zero while `q` keeps orthonormal columns.
pub fn qr(a: &Matrix) -> Result<QrResult> {
    a.ensure_finite("qr input")?;
    let (m, n) = a.shape();
    if m < n {
        return Err(invalid(format!("qr needs rows >= cols, got {m}x{n}")));
    }

    let mut work = a.clone();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    for j in 0..n {
        let x: Vec<f64> = (j..m).map(|i| work[(i, j)]).collect();
        let xnorm = norm(&x);
        if xnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = norm(&v);
        if vnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vnorm);
        for c in j..n {
            let col: Vec<f64> = (j..m).map(|i| work[(i, c)]).collect();
            let s = 2.0 * dot(&v, &col);
            for (off, &vi) in v.iter().enumerate() {
                work[(j + off, c)] -= s * vi;
            }
        }
        reflectors.push(Some(v));
    }

    let mut r = Matrix::from_fn(n, n, |i, j| if j >= i { work[(i, j)] } else { 0.0 });

    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of the identity.
    let mut q = Matrix::from_fn(m, n, |i, j| if i == j { 1.0 } else { 0.0 });
    for (j, refl) in reflectors.iter().enumerate().rev() {
        let Some(v) = refl else { continue };
        for c in 0..n {
            let col: Vec<f64> = (j..m).map(|i| q[(i, c)]).collect();
            let s = 2.0 * dot(v, &col);
            for (off, &vi) in v.iter().enumerate() {
                q[(j + off, c)] -= s * vi;
            }
        }
    }

    for i in 0..n {
        if r[(i, i)] < 0.0 {
            for c in i..n {
                r[(i, c)] = -r[(i, c)];
            }
            for row in 0..m {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }
    Ok(QrResult { q, r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;

    #[test]
    fn identity_factors_trivially() {
        let f = qr(&Matrix::identity(3)).unwrap();
        assert!(f.q.max_abs_diff(&Matrix::identity(3)) < 1e-15);
        assert!(f.r.max_abs_diff(&Matrix::identity(3)) < 1e-15);
    }

    #[test]
    fn single_column() {
        let f = qr(&Matrix::column(&[3.0, 4.0])).unwrap();
        let q = f.q.col(0);
        let sign = q[0].signum();
        assert!((sign * q[0] - 0.6).abs() < 1e-15);
        assert!((sign * q[1] - 0.8).abs() < 1e-15);
        assert!((f.r[(0, 0)].abs() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn random_tall_is_orthonormal() {
        let a = gaussian_matrix(6, 3, 11);
        let f = qr(&a).unwrap();
        assert!(f.q.t_matmul(&f.q).max_abs_diff(&Matrix::identity(3)) < 1e-10);
        assert!(f.q.matmul(&f.r).max_abs_diff(&a) < 1e-12);
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(f.r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn rank_deficient_and_errors() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let f = qr(&a).unwrap();
        assert!(f.r[(1, 1)].abs() < 1e-12);
        assert!(f.q.t_matmul(&f.q).max_abs_diff(&Matrix::identity(2)) < 1e-12);
        assert!(f.q.matmul(&f.r).max_abs_diff(&a) < 1e-12);
        assert!(qr(&Matrix::zeros(2, 3)).is_err());
        let z = qr(&Matrix::zeros(3, 2)).unwrap();
        assert!(z.q.t_matmul(&z.q).max_abs_diff(&Matrix::identity(2)) < 1e-15);
    }
}
