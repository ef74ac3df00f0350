//! Dense `f64` linear algebra: QR, SVD, pseudoinverse, symmetric solves and a
//! couple of distribution helpers. Everything here is a pure function of its
//! inputs.

mod matrix;
mod qr;
mod solve;
mod svd;

pub use matrix::{axpy, dot, gaussian_matrix, norm, Matrix};
pub use qr::{qr, QrResult};
pub use solve::{cholesky, cholesky_solve, lstsq, pinv, solve_psd, spd_inverse};
pub use svd::{svd, SvdResult};

use crate::error::{invalid, Result};

/// Quantile of the chi-square distribution with two degrees of freedom,
/// `-2 ln(1 - p)`.
pub fn chi2_quantile_df2(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!(
            "quantile probability must lie in (0, 1), got {p}"
        )));
    }
    Ok(-2.0 * (-p).ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_df2_values() {
        assert!((chi2_quantile_df2(0.95).unwrap() - 5.991_464_547_107_979).abs() < 1e-12);
        assert!((chi2_quantile_df2(0.5).unwrap() - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert!(chi2_quantile_df2(1e-300).unwrap() < 1e-299);
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(chi2_quantile_df2(bad).is_err());
        }
    }

    #[test]
    fn chi2_df2_is_increasing() {
        let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        let q: Vec<f64> = grid
            .iter()
            .map(|&p| chi2_quantile_df2(p).unwrap())
            .collect();
        assert!(q.windows(2).all(|w| w[0] < w[1]));
    }
}
