use super::{autoregressive, PredictionTrace};
use crate::error::{invalid, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::promptgen::Prompt;
use crate::rng;

const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct GdFit {
    pub beta: Vec<f64>,
    pub diverged: bool,
}

/// Gradient descent on `‖Xβ - y‖²` from `β⁽⁰⁾ ~ N(0, I)`:
/// `β ← β - 2η (XᵀXβ - Xᵀy)`. Stops early once `‖β‖` exceeds 1e8.
pub fn gd_fit(x: &Matrix, y: &[f64], eta: f64, iters: usize, seed: u64) -> Result<GdFit> {
    if !(eta > 0.0) {
        return Err(invalid(format!("gd learning rate must be > 0, got {eta}")));
    }
    let d = x.cols();
    let mut beta = rng::normal_vec(&mut rng::rng_from_seed(seed), d);
    let gram = x.t_matmul(x);
    let xty = x.t_matvec(y);
    let mut grad = vec![0.0; d];
    for _ in 0..iters {
        for (i, g) in grad.iter_mut().enumerate() {
            *g = 2.0 * (dot(gram.row(i), &beta) - xty[i]);
        }
        for (b, g) in beta.iter_mut().zip(&grad) {
            *b -= eta * g;
        }
        let n = norm(&beta);
        if !(n <= DIVERGENCE_NORM) {
            return Ok(GdFit {
                beta,
                diverged: true,
            });
        }
    }
    Ok(GdFit {
        beta,
        diverged: false,
    })
}

pub fn gd_trace(prompt: &Prompt, eta: f64, iters: usize, seed: u64) -> Result<PredictionTrace> {
    if !(eta > 0.0) {
        return Err(invalid(format!("gd learning rate must be > 0, got {eta}")));
    }
    let mut diverged = false;
    let preds = autoregressive(prompt, |x, y, q, pos| {
        let fit = gd_fit(x, y, eta, iters, rng::derive_seed(seed, &[pos as u64]))?;
        diverged |= fit.diverged;
        Ok(dot(&fit.beta, q))
    })?;
    let mut trace = PredictionTrace::from_predictions("gd", prompt, preds);
    trace.diverged = diverged;
    Ok(trace)
}
