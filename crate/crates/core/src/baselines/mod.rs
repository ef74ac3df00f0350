//! Classical in-context regression baselines and the shared evaluation protocol.
//!
//! Every baseline is autoregressive: the prediction at position `i` (1-based)
//! is fitted on the first `i - 1` pairs only, and position 1 always predicts
//! 0. Errors are measured against the noiseless target `wᵀx_i`.

mod bayes;
mod gd;
mod kernel;

pub use bayes::{bayes_posterior, bayes_predict, bayes_trace, BayesPosterior};
pub use gd::{gd_fit, gd_trace, GdFit};
pub use kernel::{kernel_ridge_predict, kernel_ridge_trace, rbf_gram};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, lstsq, pinv, solve_psd, Matrix};
use crate::promptgen::Prompt;

/// Per-position predictions of one model on one prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub model_id: String,
    pub prompt_seed: u64,
    pub predictions: Vec<f64>,
    pub squared_errors: Vec<f64>,
    /// Set when an iterative fit blew up at some position.
    pub diverged: bool,
}

impl PredictionTrace {
    pub fn from_predictions(model_id: &str, prompt: &Prompt, predictions: Vec<f64>) -> Self {
        let squared_errors = predictions
            .iter()
            .zip(prompt.targets())
            .map(|(p, t)| (p - t).powi(2))
            .collect();
        Self {
            model_id: model_id.to_string(),
            prompt_seed: prompt.meta.seed,
            predictions,
            squared_errors,
            diverged: false,
        }
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    /// Squared error averaged over all positions.
    pub fn mean_error(&self) -> f64 {
        self.squared_errors.iter().sum::<f64>() / self.squared_errors.len() as f64
    }
}

/// Hyperparameters of the baselines. The defaults are sweep starting points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub ridge_lambda: f64,
    pub bayes_tau: f64,
    pub bayes_sigma: f64,
    pub bayes_samples: usize,
    pub kernel_lambda: f64,
    /// RBF bandwidth; `None` uses `sqrt(d)`.
    pub kernel_sigma: Option<f64>,
    pub gd_eta: f64,
    pub gd_iters: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: 0.01,
            bayes_tau: 1.0,
            bayes_sigma: 1.0,
            bayes_samples: 64,
            kernel_lambda: 0.01,
            kernel_sigma: None,
            gd_eta: 0.01,
            gd_iters: 1000,
        }
    }
}

/// The baselines addressable by name from the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Ols,
    Ridge,
    Bayes,
    KernelRidge,
    Gd,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [
        Baseline::Ols,
        Baseline::Ridge,
        Baseline::Bayes,
        Baseline::KernelRidge,
        Baseline::Gd,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Baseline::Ols => "ols",
            Baseline::Ridge => "ridge",
            Baseline::Bayes => "bayes",
            Baseline::KernelRidge => "kernel_ridge",
            Baseline::Gd => "gd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.id() == s)
            .ok_or_else(|| invalid(format!("unknown baseline {s:?}")))
    }

    pub fn trace(
        self,
        prompt: &Prompt,
        cfg: &BaselineConfig,
        seed: u64,
    ) -> Result<PredictionTrace> {
        match self {
            Baseline::Ols => ols_trace(prompt),
            Baseline::Ridge => ridge_trace(prompt, cfg.ridge_lambda),
            Baseline::Bayes => bayes_trace(
                prompt,
                cfg.bayes_tau,
                cfg.bayes_sigma,
                cfg.bayes_samples,
                seed,
            ),
            Baseline::KernelRidge => {
                let sigma = cfg.kernel_sigma.unwrap_or((prompt.d() as f64).sqrt());
                kernel_ridge_trace(prompt, cfg.kernel_lambda, sigma)
            }
            Baseline::Gd => gd_trace(prompt, cfg.gd_eta, cfg.gd_iters, seed),
        }
    }
}

/// Runs `predict(context_xs, context_ys, query, position)` for every position
/// with a non-empty context; position 1 predicts 0.
pub(crate) fn autoregressive(
    prompt: &Prompt,
    mut predict: impl FnMut(&Matrix, &[f64], &[f64], usize) -> Result<f64>,
) -> Result<Vec<f64>> {
    let rows = prompt.xs.rows();
    let mut preds = vec![0.0; rows];
    for (i, pred) in preds.iter_mut().enumerate().skip(1) {
        let ctx = prompt.xs.row_range(0, i);
        *pred = predict(&ctx, &prompt.ys[..i], prompt.x(i), i)?;
    }
    Ok(preds)
}

/// Minimum-norm least squares on the first `i - 1` pairs.
pub fn ols_trace(prompt: &Prompt) -> Result<PredictionTrace> {
    let preds = autoregressive(prompt, |x, y, q, _| Ok(dot(&lstsq(x, y)?, q)))?;
    Ok(PredictionTrace::from_predictions("ols", prompt, preds))
}

const PROJECTED_RANK_TOL: f64 = 1e-10;

/// OLS after replacing every input by `p_a · x_i`; labels and targets are the
/// original prompt's.
pub fn ols_projected_inputs_trace(prompt: &Prompt, p_a: &Matrix) -> Result<PredictionTrace> {
    if p_a.shape() != (prompt.d(), prompt.d()) {
        return Err(Error::Shape(
            "projection does not match prompt dimension".into(),
        ));
    }
    let projected = prompt.with_projected_inputs(p_a);
    // Singular values are cut relative to the unprojected context so that
    // components the projection annihilates (up to rounding) count as zero.
    let preds = autoregressive(&projected, |x, y, q, i| {
        let scale = prompt.xs.row_range(0, i).frobenius_norm();
        let beta = pinv(x, Some(PROJECTED_RANK_TOL * scale))?.matvec(y);
        Ok(dot(&beta, q))
    })?;
    Ok(PredictionTrace::from_predictions("ols_proj", prompt, preds))
}

/// `(XᵀX + λI)⁻¹ Xᵀy`.
pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let mut gram = x.t_matmul(x);
    for i in 0..gram.rows() {
        gram[(i, i)] += lambda;
    }
    solve_psd(&gram, &x.t_matvec(y))
}

pub fn ridge_trace(prompt: &Prompt, lambda: f64) -> Result<PredictionTrace> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let preds = autoregressive(prompt, |x, y, q, _| Ok(dot(&ridge_fit(x, y, lambda)?, q)))?;
    Ok(PredictionTrace::from_predictions("ridge", prompt, preds))
}

/// Per-position mean of squared errors across a batch of traces.
pub fn mean_squared_error(traces: &[PredictionTrace]) -> Result<Vec<f64>> {
    let first = traces
        .first()
        .ok_or_else(|| invalid("mean_squared_error of an empty batch"))?;
    let len = first.len();
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::Shape("traces differ in length".into()));
    }
    let mut out = vec![0.0; len];
    for t in traces {
        for (o, e) in out.iter_mut().zip(&t.squared_errors) {
            *o += e;
        }
    }
    let n = traces.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// CSV with columns `model_id, prompt_seed, position, prediction, squared_error`.
pub fn write_traces_csv<W: Write>(out: W, traces: &[PredictionTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model_id",
        "prompt_seed",
        "position",
        "prediction",
        "squared_error",
    ])?;
    for t in traces {
        for (i, (p, e)) in t.predictions.iter().zip(&t.squared_errors).enumerate() {
            w.write_record([
                t.model_id.clone(),
                t.prompt_seed.to_string(),
                (i + 1).to_string(),
                p.to_string(),
                e.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
