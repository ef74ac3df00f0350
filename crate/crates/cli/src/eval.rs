//! Batched evaluation of transformers and baselines over prompt sets.

use icl_core::baselines::{mean_squared_error, Baseline, BaselineConfig, PredictionTrace};
use icl_core::rng::derive_seed;
use icl_core::transformer::{forward_batch, Params};
use icl_core::{Prompt, PromptDistribution};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Work unit size; results never depend on the thread count.
pub const CHUNK: usize = 32;

/// Maps `f` over fixed-size chunks of `items` on up to `threads` scoped
/// threads and concatenates the results in order.
pub fn par_chunks<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&[T]) -> Result<Vec<R>> + Sync,
) -> Result<Vec<R>> {
    let chunks: Vec<&[T]> = items.chunks(CHUNK).collect();
    if threads <= 1 || chunks.len() <= 1 {
        let mut out = Vec::with_capacity(items.len());
        for c in chunks {
            out.extend(f(c)?);
        }
        return Ok(out);
    }
    let workers = threads.min(chunks.len());
    let mut slots: Vec<Option<Result<Vec<R>>>> = (0..chunks.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (chunks, f) = (&chunks, &f);
                s.spawn(move || {
                    (w..chunks.len())
                        .step_by(workers)
                        .map(|i| (i, f(chunks[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("evaluation thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    let mut out = Vec::with_capacity(items.len());
    for r in slots {
        out.extend(r.expect("every chunk evaluated")?);
    }
    Ok(out)
}

/// Stable stream id of a label, for deriving per-purpose seeds.
pub fn tag_id(tag: &str) -> u64 {
    let h = Sha256::digest(tag.as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

/// Seed of the prompt set `tag` under evaluation seed `seed`.
pub fn set_seed(seed: u64, tag: &str) -> u64 {
    derive_seed(seed, &[tag_id(tag)])
}

/// `E[(wᵀx)²]` of a distribution: `scale² ‖P_w P_x‖_F²`.
pub fn expected_y2(dist: &PromptDistribution) -> f64 {
    let d = dist.d;
    let eye = icl_core::Matrix::identity(d);
    let pw = dist.p_w.as_ref().unwrap_or(&eye);
    let px = dist.p_x.as_ref().unwrap_or(&eye);
    dist.scale * dist.scale * pw.matmul(px).frobenius_norm().powi(2)
}

pub fn transformer_traces(
    params: &Params<f32>,
    model_id: &str,
    prompts: &[Prompt],
    threads: usize,
) -> Result<Vec<PredictionTrace>> {
    par_chunks(prompts, threads, |chunk| {
        let seqs: Vec<_> = chunk.iter().map(icl_core::promptgen::tokenize).collect();
        let outs = forward_batch(params, &seqs, false)?;
        Ok(chunk
            .iter()
            .zip(outs)
            .map(|(p, o)| PredictionTrace::from_predictions(model_id, p, o.predictions))
            .collect())
    })
}

/// Baseline traces; randomized baselines draw from seeds derived from the prompt seed.
pub fn baseline_traces(
    baseline: Baseline,
    cfg: &BaselineConfig,
    prompts: &[Prompt],
    threads: usize,
) -> Result<Vec<PredictionTrace>> {
    par_chunks(prompts, threads, |chunk| {
        chunk
            .iter()
            .map(|p| {
                Ok(baseline.trace(p, cfg, derive_seed(p.meta.seed, &[tag_id(baseline.id())]))?)
            })
            .collect()
    })
}

pub fn mse_curve(traces: &[PredictionTrace]) -> Result<Vec<f64>> {
    Ok(mean_squared_error(traces)?)
}

pub fn final_mse(traces: &[PredictionTrace]) -> Result<f64> {
    Ok(*mse_curve(traces)?.last().expect("non-empty prompt"))
}
