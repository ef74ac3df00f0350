//! Synthetic in-context regression prompts.
//!
//! A prompt distribution `D(P_w, P_x)` draws a task `w = P_w w_g` and inputs
//! `x = s · P_x x_g` with `w_g, x_g ~ N(0, I_d)`, labelled by `y = wᵀx + ε`.
//! Each prompt seed is split into independent task, input and noise
//! substreams, so blending experiments reuse the same `w_g`/`x_g` for every
//! blend coefficient.

mod io;
mod tokens;

pub use io::{read_batch, write_batch, write_batch_csv, BatchHeader};
pub use tokens::{curriculum_mask, tokenize, TokenSequence};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, gaussian_matrix, qr, Matrix};
use crate::rng::{self, stream};

/// Orthogonal projections onto a random `q`-dimensional subspace `A` of `R^d`
/// and onto its complement `B`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubspacePair {
    pub dim_ambient: usize,
    pub dim_sub: usize,
    pub p_a: Matrix,
    pub p_b: Matrix,
    /// Seed actually used (after any resampling).
    pub seed: u64,
}

/// Builds `P_A = Q_q Q_qᵀ` from the QR factorization of a `d x q` Gaussian
/// matrix, and `P_B = I - P_A`.
pub fn make_subspace_pair(d: usize, q: usize, seed: u64) -> Result<SubspacePair> {
    if !(q >= 1 && q < d) {
        return Err(invalid(format!(
            "subspace needs 1 <= q < d, got q={q}, d={d}"
        )));
    }
    let mut seed_used = seed;
    loop {
        let v = gaussian_matrix(d, q, seed_used);
        let f = qr(&v)?;
        let min_diag = (0..q)
            .map(|i| f.r[(i, i)].abs())
            .fold(f64::INFINITY, f64::min);
        if min_diag > 1e-10 {
            let basis = f.q;
            let p_a = basis.matmul(&basis.transpose());
            let p_a = symmetrize(&p_a);
            let p_b = Matrix::identity(d).sub(&p_a);
            return Ok(SubspacePair {
                dim_ambient: d,
                dim_sub: q,
                p_a,
                p_b,
                seed: seed_used,
            });
        }
        seed_used = seed_used.wrapping_add(1);
    }
}

fn symmetrize(m: &Matrix) -> Matrix {
    m.add(&m.transpose()).scale(0.5)
}

/// Parameters of a prompt distribution `D(P_w, P_x)` with optional label
/// noise and input scale.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PromptDistribution {
    pub d: usize,
    pub k: usize,
    /// Task projection; `None` is the identity.
    pub p_w: Option<Matrix>,
    /// Input projection; `None` is the identity.
    pub p_x: Option<Matrix>,
    pub noise_sigma: f64,
    pub scale: f64,
    /// Free-form label carried into prompt metadata.
    pub tag: String,
}

impl PromptDistribution {
    /// `D(I, I)`: unrestricted tasks and inputs.
    pub fn full(d: usize, k: usize) -> Self {
        Self {
            d,
            k,
            p_w: None,
            p_x: None,
            noise_sigma: 0.0,
            scale: 1.0,
            tag: "full".into(),
        }
    }

    /// `D(P_w = I, P_x = p)`.
    pub fn input_restricted(d: usize, k: usize, p: &Matrix, tag: &str) -> Self {
        Self {
            p_x: Some(p.clone()),
            tag: tag.into(),
            ..Self::full(d, k)
        }
    }

    /// `D(P_w = p, P_x = I)`.
    pub fn weight_restricted(d: usize, k: usize, p: &Matrix, tag: &str) -> Self {
        Self {
            p_w: Some(p.clone()),
            tag: tag.into(),
            ..Self::full(d, k)
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(invalid("distribution needs d >= 1 and k >= 1"));
        }
        for (name, p) in [("p_w", &self.p_w), ("p_x", &self.p_x)] {
            if let Some(p) = p {
                if p.shape() != (self.d, self.d) {
                    return Err(Error::Shape(format!(
                        "{name} is {:?}, expected {}x{}",
                        p.shape(),
                        self.d,
                        self.d
                    )));
                }
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(invalid(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(invalid(format!("scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub tag: String,
    pub seed: u64,
}

/// `k` labelled pairs plus a query. Row `k` of `xs` is the query and `ys[k]`
/// its hidden label, kept for evaluation only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub xs: Matrix,
    pub ys: Vec<f64>,
    pub w: Vec<f64>,
    pub meta: PromptMeta,
}

impl Prompt {
    pub fn new(xs: Matrix, ys: Vec<f64>, w: Vec<f64>, meta: PromptMeta) -> Result<Self> {
        if xs.rows() != ys.len() || xs.cols() != w.len() || xs.rows() < 1 {
            return Err(Error::Shape(format!(
                "prompt with xs {:?}, {} labels, w of length {}",
                xs.shape(),
                ys.len(),
                w.len()
            )));
        }
        if ys.iter().chain(&w).any(|v| !v.is_finite()) || !xs.is_finite() {
            return Err(Error::NonFinite("prompt"));
        }
        Ok(Self { xs, ys, w, meta })
    }

    /// Number of in-context pairs (the query is excluded).
    pub fn k(&self) -> usize {
        self.xs.rows() - 1
    }

    pub fn d(&self) -> usize {
        self.xs.cols()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.xs.row(i)
    }

    /// Noiseless targets `wᵀx_i` for every position including the query.
    pub fn targets(&self) -> Vec<f64> {
        (0..self.xs.rows())
            .map(|i| dot(&self.w, self.xs.row(i)))
            .collect()
    }

    /// Prompt with every input (context and query) replaced by `p · x_i`;
    /// labels and task are unchanged.
    pub fn with_projected_inputs(&self, p: &Matrix) -> Prompt {
        let xs = Matrix::from_fn(self.xs.rows(), self.d(), |i, j| {
            dot(p.row(j), self.xs.row(i))
        });
        Prompt {
            xs,
            ys: self.ys.clone(),
            w: self.w.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Training-time curriculum: zero the trailing `d_start` input coordinates,
    /// relabel with the same task and noise draw, and keep the first `k_start`
    /// pairs plus the following query.
    pub fn curriculum(&self, d_start: usize, k_start: usize) -> Result<Prompt> {
        let (d, k) = (self.d(), self.k());
        if d_start >= d || k_start < 1 || k_start > k {
            return Err(invalid(format!(
                "curriculum needs d_start < d and 1 <= k_start <= k (d_start={d_start}, k_start={k_start}, d={d}, k={k})"
            )));
        }
        let keep = d - d_start;
        let rows = k_start + 1;
        let xs = Matrix::from_fn(rows, d, |i, j| if j < keep { self.xs[(i, j)] } else { 0.0 });
        let ys = (0..rows)
            .map(|i| {
                let noise = self.ys[i] - dot(&self.w, self.xs.row(i));
                dot(&self.w, xs.row(i)) + noise
            })
            .collect();
        Ok(Prompt {
            xs,
            ys,
            w: self.w.clone(),
            meta: self.meta.clone(),
        })
    }
}

fn apply(p: Option<&Matrix>, v: &[f64]) -> Vec<f64> {
    match p {
        Some(p) => p.matvec(v),
        None => v.to_vec(),
    }
}

fn label(w: &[f64], xs: &Matrix, noise_sigma: f64, seed: u64) -> Vec<f64> {
    let mut noise_rng = rng::substream(seed, stream::NOISE);
    (0..xs.rows())
        .map(|i| {
            let clean = dot(w, xs.row(i));
            if noise_sigma > 0.0 {
                clean + noise_sigma * rng::normal(&mut noise_rng)
            } else {
                clean
            }
        })
        .collect()
}

fn gaussian_task(d: usize, seed: u64) -> Vec<f64> {
    rng::normal_vec(&mut rng::substream(seed, stream::TASK), d)
}

fn gaussian_inputs(d: usize, rows: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut g = rng::substream(seed, stream::INPUTS);
    (0..rows).map(|_| rng::normal_vec(&mut g, d)).collect()
}

/// Draws one prompt of `k + 1` pairs from `dist`.
pub fn sample_prompt(dist: &PromptDistribution, seed: u64) -> Result<Prompt> {
    dist.validate()?;
    let (d, rows) = (dist.d, dist.k + 1);
    let w = apply(dist.p_w.as_ref(), &gaussian_task(d, seed));
    let raw = gaussian_inputs(d, rows, seed);
    let mut xs = Matrix::zeros(rows, d);
    for (i, xg) in raw.iter().enumerate() {
        let x = apply(dist.p_x.as_ref(), xg);
        for (dst, v) in xs.row_mut(i).iter_mut().zip(x) {
            *dst = dist.scale * v;
        }
    }
    let ys = label(&w, &xs, dist.noise_sigma, seed);
    Prompt::new(
        xs,
        ys,
        w,
        PromptMeta {
            tag: dist.tag.clone(),
            seed,
        },
    )
}

/// Draws `n` prompts with seeds derived from `seed`.
pub fn sample_batch(dist: &PromptDistribution, n: usize, seed: u64) -> Result<Vec<Prompt>> {
    (0..n)
        .map(|i| sample_prompt(dist, rng::derive_seed(seed, &[i as u64])))
        .collect()
}

fn check_blend(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!(
            "blend coefficient must lie in [0, 1], got {t}"
        )));
    }
    Ok(())
}

/// Inputs `t · P_A x_g + (1 - t) · P_B x_g` for one shared draw `x_g`; tasks are
/// unrestricted and labels noiseless.
pub fn blend_input_prompt(pair: &SubspacePair, k: usize, t: f64, seed: u64) -> Result<Prompt> {
    check_blend(t)?;
    let d = pair.dim_ambient;
    let w = gaussian_task(d, seed);
    let raw = gaussian_inputs(d, k + 1, seed);
    let mut xs = Matrix::zeros(k + 1, d);
    for (i, xg) in raw.iter().enumerate() {
        let a = pair.p_a.matvec(xg);
        let b = pair.p_b.matvec(xg);
        for (j, dst) in xs.row_mut(i).iter_mut().enumerate() {
            *dst = t * a[j] + (1.0 - t) * b[j];
        }
    }
    let ys = label(&w, &xs, 0.0, seed);
    Prompt::new(
        xs,
        ys,
        w,
        PromptMeta {
            tag: format!("blend_input:{t}"),
            seed,
        },
    )
}

/// Task `t · P_A w_g + (1 - t) · P_B w_g` with full-space Gaussian inputs.
pub fn blend_weight_prompt(pair: &SubspacePair, k: usize, t: f64, seed: u64) -> Result<Prompt> {
    check_blend(t)?;
    let d = pair.dim_ambient;
    let wg = gaussian_task(d, seed);
    let a = pair.p_a.matvec(&wg);
    let b = pair.p_b.matvec(&wg);
    let w: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| t * x + (1.0 - t) * y)
        .collect();
    let raw = gaussian_inputs(d, k + 1, seed);
    let xs = Matrix::from_rows(&raw)?;
    let ys = label(&w, &xs, 0.0, seed);
    Prompt::new(
        xs,
        ys,
        w,
        PromptMeta {
            tag: format!("blend_weight:{t}"),
            seed,
        },
    )
}
