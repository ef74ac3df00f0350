use super::{autoregressive, PredictionTrace};
use crate::error::{invalid, Result};
use crate::linalg::{cholesky, cholesky_solve, Matrix};
use crate::promptgen::Prompt;

fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-sq / (2.0 * sigma * sigma)).exp()
}

/// Gram matrix `K_ij = exp(-‖x_i - x_j‖² / 2σ²)` over the rows of `x`.
pub fn rbf_gram(x: &Matrix, sigma: f64) -> Matrix {
    let n = x.rows();
    Matrix::from_fn(n, n, |i, j| rbf(x.row(i), x.row(j), sigma))
}

/// `k(q)ᵀ (K + λI)⁻¹ y`.
pub fn kernel_ridge_predict(
    x: &Matrix,
    y: &[f64],
    query: &[f64],
    lambda: f64,
    sigma: f64,
) -> Result<f64> {
    let mut k = rbf_gram(x, sigma);
    for i in 0..k.rows() {
        k[(i, i)] += lambda;
    }
    let alpha = cholesky_solve(&cholesky(&k)?, y);
    Ok((0..x.rows())
        .map(|i| alpha[i] * rbf(x.row(i), query, sigma))
        .sum())
}

pub fn kernel_ridge_trace(prompt: &Prompt, lambda: f64, sigma: f64) -> Result<PredictionTrace> {
    if !(lambda > 0.0) {
        return Err(invalid(format!(
            "kernel ridge needs lambda > 0, got {lambda}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(invalid(format!(
            "kernel bandwidth must be > 0, got {sigma}"
        )));
    }
    let preds = autoregressive(prompt, |x, y, q, _| {
        kernel_ridge_predict(x, y, q, lambda, sigma)
    })?;
    Ok(PredictionTrace::from_predictions(
        "kernel_ridge",
        prompt,
        preds,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptgen::{sample_prompt, PromptDistribution};

    #[test]
    fn gram_has_unit_diagonal() {
        let p = sample_prompt(&PromptDistribution::full(4, 9), 3).unwrap();
        let k = rbf_gram(&p.xs, 1.3);
        for i in 0..k.rows() {
            assert_eq!(k[(i, i)], 1.0);
        }
        assert!(k.max_abs_diff(&k.transpose()) == 0.0);
    }

    #[test]
    fn interpolates_training_point() {
        let x = Matrix::from_rows(&[vec![0.3, -1.0]]).unwrap();
        let pred = kernel_ridge_predict(&x, &[2.5], &[0.3, -1.0], 1e-10, 1.0).unwrap();
        assert!((pred - 2.5).abs() < 1e-8);
    }

    #[test]
    fn two_point_dual_system() {
        // Hand-solved: K = [[1, e], [e, 1]] with e = exp(-1/2) for points 0 and 1,
        // σ = 1; (K + λI)α = y by Cramer's rule.
        let (lambda, y1, y2, q) = (0.1, 1.0, -2.0, 0.4);
        let e = (-0.5f64).exp();
        let (a, b) = (1.0 + lambda, e);
        let det = a * a - b * b;
        let alpha = [(a * y1 - b * y2) / det, (a * y2 - b * y1) / det];
        let expect = alpha[0] * (-(q * q) / 2.0f64).exp()
            + alpha[1] * (-((q - 1.0) * (q - 1.0)) / 2.0f64).exp();
        let x = Matrix::column(&[0.0, 1.0]);
        let got = kernel_ridge_predict(&x, &[y1, y2], &[q], lambda, 1.0).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn trace_validates_hyperparameters() {
        let p = sample_prompt(&PromptDistribution::full(2, 3), 0).unwrap();
        assert!(kernel_ridge_trace(&p, 0.0, 1.0).is_err());
        assert!(kernel_ridge_trace(&p, 0.1, 0.0).is_err());
        let t = kernel_ridge_trace(&p, 0.1, 1.0).unwrap();
        assert_eq!(t.predictions[0], 0.0);
    }
}
