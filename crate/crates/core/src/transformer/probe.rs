use super::model::forward_batch;
use super::params::Params;
use super::scalar::Scalar;
use crate::error::{invalid, Result};
use crate::linalg::{pinv, svd, Matrix};
use crate::promptgen::{tokenize, Prompt, PromptMeta, TokenSequence};

/// Anything that predicts a label at every x-token position.
pub trait SequenceModel {
    fn predict(&self, seqs: &[TokenSequence]) -> Result<Vec<Vec<f64>>>;
}

impl<T: Scalar> SequenceModel for Params<T> {
    fn predict(&self, seqs: &[TokenSequence]) -> Result<Vec<Vec<f64>>> {
        Ok(forward_batch(self, seqs, false)?
            .into_iter()
            .map(|o| o.predictions)
            .collect())
    }
}

/// Weight vector recovered from a model's predictions on query points.
#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitWeight {
    pub beta: Vec<f64>,
    /// Query predictions, one per row of the query matrix.
    pub predictions: Vec<f64>,
    /// Set when the query matrix has rank below `d`.
    pub rank_deficient: bool,
}

/// Prepends the context pairs of `context` to every query row, collects the
/// model's query predictions `ŷ` and returns `β̂ = pinv(X_q) ŷ`.
pub fn implicit_weight<M: SequenceModel + ?Sized>(
    model: &M,
    context: &Prompt,
    queries: &Matrix,
) -> Result<ImplicitWeight> {
    let (k, d) = (context.k(), context.d());
    if k <= d {
        return Err(invalid(format!(
            "context needs more than d = {d} examples, got {k}"
        )));
    }
    if queries.cols() != d || queries.rows() < d {
        return Err(invalid(format!(
            "queries must be n x {d} with n >= {d}, got {:?}",
            queries.shape()
        )));
    }
    let seqs: Vec<TokenSequence> = (0..queries.rows())
        .map(|r| {
            let mut xs = context.xs.clone();
            xs.row_mut(k).copy_from_slice(queries.row(r));
            let mut ys = context.ys.clone();
            ys[k] = 0.0;
            let meta = PromptMeta {
                tag: context.meta.tag.clone(),
                seed: context.meta.seed,
            };
            Prompt::new(xs, ys, context.w.clone(), meta).map(|p| tokenize(&p))
        })
        .collect::<Result<_>>()?;
    let predictions: Vec<f64> = model.predict(&seqs)?.into_iter().map(|p| p[k]).collect();
    let s = svd(queries)?;
    let rank_deficient = s.rank(s.default_tolerance()) < d;
    let beta = pinv(queries, None)?.matvec(&predictions);
    Ok(ImplicitWeight {
        beta,
        predictions,
        rank_deficient,
    })
}
