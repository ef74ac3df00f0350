//! Spectral analysis of residual-stream representations.
//!
//! A prompt's representation `Z_p` stacks the captured pre-readout vectors of
//! its `k + 1` x-tokens, so it is `(k + 1) x m`. Right singular vectors of
//! `Z_p` are compared index-wise with those of a pooled canonical matrix.

pub mod svg;

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, svd, Matrix};
use crate::promptgen::{tokenize, Prompt, PromptMeta, TokenSequence};
use crate::transformer::{forward_batch, Params, Scalar};

/// Singular values closer than this are treated as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-8;
/// Canonical pool size.
pub const DEFAULT_POOL: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationItem {
    pub prompt: PromptMeta,
    pub z: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationBatch {
    pub source: String,
    pub items: Vec<RepresentationItem>,
}

impl RepresentationBatch {
    pub fn new(source: &str, items: Vec<RepresentationItem>) -> Result<Self> {
        if let Some(first) = items.first() {
            let shape = first.z.shape();
            if items.iter().any(|it| it.z.shape() != shape) {
                return Err(Error::Shape(
                    "representations in a batch differ in shape".into(),
                ));
            }
        }
        Ok(Self {
            source: source.into(),
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn require_items(&self) -> Result<()> {
        if self.items.is_empty() {
            Err(invalid(format!(
                "representation batch '{}' is empty",
                self.source
            )))
        } else {
            Ok(())
        }
    }
}

/// Runs the model with capture on every prompt.
pub fn collect<T: Scalar>(
    params: &Params<T>,
    prompts: &[Prompt],
    source: &str,
) -> Result<RepresentationBatch> {
    if let Some(p0) = prompts.first() {
        if prompts.iter().any(|p| p.k() != p0.k() || p.d() != p0.d()) {
            return Err(Error::Shape("prompts in a batch must share k and d".into()));
        }
    }
    let seqs: Vec<TokenSequence> = prompts.iter().map(tokenize).collect();
    let outs = forward_batch(params, &seqs, true)?;
    let items = prompts
        .iter()
        .zip(outs)
        .map(|(p, o)| RepresentationItem {
            prompt: p.meta.clone(),
            z: o.residuals.expect("captured residuals"),
        })
        .collect();
    RepresentationBatch::new(source, items)
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumStats {
    pub source: String,
    pub count: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-index mean and standard deviation of the singular values of every `Z_p`.
pub fn spectrum_stats(batch: &RepresentationBatch) -> Result<SpectrumStats> {
    batch.require_items()?;
    let spectra: Vec<Vec<f64>> = batch
        .items
        .iter()
        .map(|it| svd(&it.z).map(|s| s.sigma))
        .collect::<Result<_>>()?;
    let r = spectra[0].len();
    let (mean, std) = (0..r)
        .map(|j| mean_std(&spectra.iter().map(|s| s[j]).collect::<Vec<_>>()))
        .unzip();
    Ok(SpectrumStats {
        source: batch.source.clone(),
        count: batch.len(),
        mean,
        std,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalBasis {
    pub source: String,
    pub pool_size: usize,
    /// `m x r` with orthonormal columns, `r = min(k + 1, m)`.
    pub v_star: Matrix,
    pub sigma: Vec<f64>,
}

impl CanonicalBasis {
    pub fn rank(&self) -> usize {
        self.v_star.cols()
    }

    /// `v*_{:2} v*_{:2}ᵀ`, the projector onto the top-two canonical plane.
    pub fn top2_projector(&self) -> Result<Matrix> {
        if self.rank() < 2 {
            return Err(invalid("canonical basis needs at least two vectors"));
        }
        let v = self.v_star.leading_cols(2);
        Ok(v.matmul(&v.transpose()))
    }
}

/// Stacks the first `pool_size` representations and takes the right singular
/// vectors of the pooled matrix.
pub fn canonical_basis(batch: &RepresentationBatch, pool_size: usize) -> Result<CanonicalBasis> {
    if pool_size == 0 || batch.len() < pool_size {
        return Err(invalid(format!(
            "canonical pool of {pool_size} needs at least that many prompts, batch has {}",
            batch.len()
        )));
    }
    let blocks: Vec<&Matrix> = batch.items[..pool_size].iter().map(|it| &it.z).collect();
    let pooled = Matrix::vstack(&blocks)?;
    let s = svd(&pooled)?;
    let (rows, m) = batch.items[0].z.shape();
    let r = rows.min(m);
    Ok(CanonicalBasis {
        source: batch.source.clone(),
        pool_size,
        v_star: s.v.leading_cols(r),
        sigma: s.sigma[..r].to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureVector {
    pub prompt: PromptMeta,
    /// `|⟨v*_j, v_{p,j}⟩|` per index.
    pub c: Vec<f64>,
    /// Indices whose singular value of `Z_p` is within [`DEGENERACY_GAP`] of a neighbour.
    pub degenerate: Vec<usize>,
}

impl SignatureVector {
    /// `‖C_{p,:2}‖²`.
    pub fn top2_norm_sq(&self) -> f64 {
        self.c.iter().take(2).map(|c| c * c).sum()
    }

    /// The first two coordinates.
    pub fn c2(&self) -> [f64; 2] {
        [self.c[0], self.c.get(1).copied().unwrap_or(0.0)]
    }
}

fn degenerate_indices(sigma: &[f64]) -> Vec<usize> {
    (0..sigma.len())
        .filter(|&j| {
            let below = j + 1 < sigma.len() && (sigma[j] - sigma[j + 1]).abs() < DEGENERACY_GAP;
            let above = j > 0 && (sigma[j - 1] - sigma[j]).abs() < DEGENERACY_GAP;
            below || above
        })
        .collect()
}

/// Index-wise alignment of `Z_p`'s right singular vectors with the basis; each
/// `v_{p,j}` is sign-flipped to agree with `v*_j`.
pub fn signature(
    z: &Matrix,
    prompt: &PromptMeta,
    basis: &CanonicalBasis,
) -> Result<SignatureVector> {
    if z.cols() != basis.v_star.rows() {
        return Err(Error::Shape(format!(
            "representation width {} does not match basis width {}",
            z.cols(),
            basis.v_star.rows()
        )));
    }
    let s = svd(z)?;
    let r = s.v.cols().min(basis.rank());
    let c = (0..r)
        .map(|j| dot(&s.v.col(j), &basis.v_star.col(j)).abs().min(1.0))
        .collect();
    Ok(SignatureVector {
        prompt: prompt.clone(),
        c,
        degenerate: degenerate_indices(&s.sigma[..r]),
    })
}

pub fn signatures(
    batch: &RepresentationBatch,
    basis: &CanonicalBasis,
) -> Result<Vec<SignatureVector>> {
    batch
        .items
        .iter()
        .map(|it| signature(&it.z, &it.prompt, basis))
        .collect()
}

/// Per-index mean and standard deviation of signature coordinates.
pub fn signature_stats(sigs: &[SignatureVector]) -> (Vec<f64>, Vec<f64>) {
    let r = sigs.iter().map(|s| s.c.len()).min().unwrap_or(0);
    (0..r)
        .map(|j| mean_std(&sigs.iter().map(|s| s.c[j]).collect::<Vec<_>>()))
        .unzip()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub source: String,
    pub count: usize,
    /// Batch mean of `‖Z P‖_F / ‖Z‖_F`.
    pub norm_ratio: f64,
    /// Batch mean of `mean_i ((Z f)_i - (Z P f)_i)^2`.
    pub mse: f64,
    pub per_prompt: Vec<(f64, f64)>,
}

/// Projects every representation onto the top-two canonical plane and
/// measures how much of its norm and of the readout it keeps.
pub fn canonical_projection_report(
    batch: &RepresentationBatch,
    basis: &CanonicalBasis,
    f: &[f64],
) -> Result<ProjectionReport> {
    batch.require_items()?;
    let p = basis.top2_projector()?;
    if f.len() != p.rows() {
        return Err(Error::Shape(
            "readout length differs from representation width".into(),
        ));
    }
    let per_prompt: Vec<(f64, f64)> = batch
        .items
        .iter()
        .map(|it| {
            let zp = it.z.matmul(&p);
            let total = it.z.frobenius_norm();
            let ratio = if total > 0.0 {
                zp.frobenius_norm() / total
            } else {
                0.0
            };
            let a = it.z.matvec(f);
            let b = zp.matvec(f);
            let mse = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / a.len() as f64;
            (ratio, mse)
        })
        .collect();
    let n = per_prompt.len() as f64;
    Ok(ProjectionReport {
        source: batch.source.clone(),
        count: per_prompt.len(),
        norm_ratio: per_prompt.iter().map(|r| r.0).sum::<f64>() / n,
        mse: per_prompt.iter().map(|r| r.1).sum::<f64>() / n,
        per_prompt,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutAlignment {
    pub source: String,
    /// `‖(V_pᵀ f)_{1..2}‖² / ‖f‖²`: mean, std.
    pub top2: (f64, f64),
    /// `‖(V_pᵀ f)_{3..10}‖² / ‖f‖²`: mean, std.
    pub next8: (f64, f64),
    pub per_prompt: Vec<(f64, f64)>,
}

/// How much of the readout direction lies along each prompt's leading right
/// singular vectors.
pub fn readout_alignment(batch: &RepresentationBatch, f: &[f64]) -> Result<ReadoutAlignment> {
    batch.require_items()?;
    let m = batch.items[0].z.cols();
    if m < 10 {
        return Err(invalid(format!("readout alignment needs m >= 10, got {m}")));
    }
    if f.len() != m {
        return Err(Error::Shape(
            "readout length differs from representation width".into(),
        ));
    }
    let ff = dot(f, f);
    if ff == 0.0 {
        return Err(invalid("readout direction is zero"));
    }
    let per_prompt: Vec<(f64, f64)> = batch
        .items
        .iter()
        .map(|it| {
            let s = svd(&it.z)?;
            let coords: Vec<f64> = (0..s.v.cols().min(10))
                .map(|j| dot(&s.v.col(j), f))
                .collect();
            let sq = |r: std::ops::Range<usize>| {
                coords
                    .get(r)
                    .map_or(0.0, |c| c.iter().map(|x| x * x).sum::<f64>())
            };
            Ok((
                sq(0..2.min(coords.len())) / ff,
                sq(2.min(coords.len())..coords.len()) / ff,
            ))
        })
        .collect::<Result<_>>()?;
    let a: Vec<f64> = per_prompt.iter().map(|p| p.0).collect();
    let b: Vec<f64> = per_prompt.iter().map(|p| p.1).collect();
    Ok(ReadoutAlignment {
        source: batch.source.clone(),
        top2: mean_std(&a),
        next8: mean_std(&b),
        per_prompt,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value of the t-test for zero correlation.
    pub p_value: f64,
    pub pairs: usize,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::Shape("correlation inputs differ in length".into()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 3 pairs, got {n}"
        )));
    }
    let (mx, _) = mean_std(xs);
    let (my, _) = mean_std(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "an input has zero variance".into(),
        ));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| invalid(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation {
        r,
        p_value,
        pairs: n,
    })
}

/// Pearson correlation of `‖C_{p,:2}‖²` with each prompt's mean squared error.
pub fn loss_signature_correlation(
    sigs: &[SignatureVector],
    mean_mse: &[f64],
) -> Result<Correlation> {
    if sigs.len() != mean_mse.len() {
        return Err(Error::Shape("one mean error per signature required".into()));
    }
    let xs: Vec<f64> = sigs.iter().map(SignatureVector::top2_norm_sq).collect();
    pearson(&xs, mean_mse)
}

/// Rows `source, index, mean, std` (1-based index).
pub fn write_spectrum_csv<W: Write>(out: W, stats: &[&SpectrumStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "index", "mean", "std"])?;
    for s in stats {
        for (j, (m, sd)) in s.mean.iter().zip(&s.std).enumerate() {
            w.write_record([
                s.source.clone(),
                (j + 1).to_string(),
                m.to_string(),
                sd.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows `source, prompt_seed, c1.., degenerate`.
pub fn write_signatures_csv<W: Write>(
    out: W,
    source: &str,
    sigs: &[SignatureVector],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let r = sigs.iter().map(|s| s.c.len()).max().unwrap_or(0);
    let mut header = vec!["source".to_string(), "prompt_seed".into()];
    header.extend((1..=r).map(|j| format!("c{j}")));
    header.push("degenerate".into());
    w.write_record(&header)?;
    for s in sigs {
        let mut rec = vec![source.to_string(), s.prompt.seed.to_string()];
        rec.extend((0..r).map(|j| s.c.get(j).map_or(String::new(), f64::to_string)));
        rec.push(
            s.degenerate
                .iter()
                .map(|j| (j + 1).to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean singular value per index with a ±std band, one series per batch.
pub fn spectrum_plot(title: &str, stats: &[&SpectrumStats]) -> svg::LinePlot {
    stats.iter().fold(
        svg::LinePlot::new(title, "singular value index", "singular value"),
        |p, s| {
            let x = (1..=s.mean.len()).map(|j| j as f64).collect();
            p.with_series(&s.source, x, s.mean.clone(), Some(s.std.clone()))
        },
    )
}
