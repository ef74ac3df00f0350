//! Confidence-region OOD detector over the first two signature coordinates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::chi2_quantile_df2;
use crate::promptgen::{sample_batch, PromptDistribution};
use crate::rng::{derive_seed, normal, rng_from_seed};
use crate::spectra::{collect, mean_std, signatures, CanonicalBasis};
use crate::transformer::{Params, Scalar};

/// Covariance determinants below this (relative to the squared trace) count as singular.
const SINGULAR_REL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianRegion {
    pub mu: [f64; 2],
    /// Population covariance of the fit samples.
    pub sigma: [[f64; 2]; 2],
    pub confidence: f64,
    /// `chi2_quantile_df2(confidence)`.
    pub threshold: f64,
    sigma_inv: [[f64; 2]; 2],
}

impl GaussianRegion {
    pub fn mahalanobis_sq(&self, c: [f64; 2]) -> f64 {
        let d = [c[0] - self.mu[0], c[1] - self.mu[1]];
        let s = &self.sigma_inv;
        d[0] * (s[0][0] * d[0] + s[0][1] * d[1]) + d[1] * (s[1][0] * d[0] + s[1][1] * d[1])
    }

    pub fn contains(&self, c: [f64; 2]) -> bool {
        self.mahalanobis_sq(c) <= self.threshold
    }

    /// Percentage of `samples` inside the region.
    pub fn inclusion_pct(&self, samples: &[[f64; 2]]) -> f64 {
        if samples.is_empty() {
            return f64::NAN;
        }
        100.0 * samples.iter().filter(|&&c| self.contains(c)).count() as f64 / samples.len() as f64
    }
}

pub fn fit_region(samples: &[[f64; 2]], confidence: f64) -> Result<GaussianRegion> {
    if samples.len() < 3 {
        return Err(invalid(format!(
            "need at least 3 samples, got {}",
            samples.len()
        )));
    }
    let threshold = chi2_quantile_df2(confidence)?;
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("region samples"));
    }
    let n = samples.len() as f64;
    let mu = [
        samples.iter().map(|c| c[0]).sum::<f64>() / n,
        samples.iter().map(|c| c[1]).sum::<f64>() / n,
    ];
    let mut sigma = [[0.0; 2]; 2];
    for c in samples {
        let d = [c[0] - mu[0], c[1] - mu[1]];
        for i in 0..2 {
            for j in 0..2 {
                sigma[i][j] += d[i] * d[j] / n;
            }
        }
    }
    let det = sigma[0][0] * sigma[1][1] - sigma[0][1] * sigma[1][0];
    let tr = sigma[0][0] + sigma[1][1];
    if !(det > SINGULAR_REL * tr * tr) || tr == 0.0 {
        return Err(Error::DegenerateFit(format!(
            "covariance [[{}, {}], [{}, {}]] is singular",
            sigma[0][0], sigma[0][1], sigma[1][0], sigma[1][1]
        )));
    }
    let sigma_inv = [
        [sigma[1][1] / det, -sigma[0][1] / det],
        [-sigma[1][0] / det, sigma[0][0] / det],
    ];
    Ok(GaussianRegion {
        mu,
        sigma,
        confidence,
        threshold,
        sigma_inv,
    })
}

/// Draws `n` points from `N(mu, sigma)` through the Cholesky factor of `sigma`.
pub fn sample_gaussian2(
    mu: [f64; 2],
    sigma: [[f64; 2]; 2],
    n: usize,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let l00 = sigma[0][0].sqrt();
    if !(l00 > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let l10 = sigma[1][0] / l00;
    let r = sigma[1][1] - l10 * l10;
    if !(r > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let l11 = r.sqrt();
    let mut rng = rng_from_seed(seed);
    Ok((0..n)
        .map(|_| {
            let (a, b) = (normal(&mut rng), normal(&mut rng));
            [mu[0] + l00 * a, mu[1] + l10 * a + l11 * b]
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub fit_size: usize,
    pub eval_size: usize,
    pub trials: usize,
    pub confidence: f64,
    /// Refits allowed per trial after a degenerate covariance.
    pub max_refits: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            fit_size: 64,
            eval_size: 64,
            trials: 20,
            confidence: 0.95,
            max_refits: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub source: String,
    pub fit_source: String,
    pub inclusion_pct_mean: f64,
    /// Population standard deviation over trials (0 for a single trial).
    pub inclusion_pct_std: f64,
    pub trials: usize,
    pub fit_size: usize,
    pub eval_size: usize,
    pub degenerate_fits: usize,
    pub per_trial: Vec<f64>,
}

/// Which sample set a draw belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSet {
    Fit,
    InDistribution,
    OutOfDistribution,
}

impl SampleSet {
    fn tag(self) -> u64 {
        match self {
            SampleSet::Fit => 0,
            SampleSet::InDistribution => 1,
            SampleSet::OutOfDistribution => 2,
        }
    }
}

/// Repeated fit-and-evaluate trials over any source of 2-d signature points.
/// `draw(set, n, seed)` must return `n` fresh points; seeds differ per trial,
/// set and refit attempt, so the three sets never share a draw.
pub fn run_trials(
    cfg: &DetectorConfig,
    seed: u64,
    tags: (&str, &str, &str),
    mut draw: impl FnMut(SampleSet, usize, u64) -> Result<Vec<[f64; 2]>>,
) -> Result<(DetectorReport, DetectorReport)> {
    if cfg.trials == 0 || cfg.fit_size < 3 || cfg.eval_size == 0 {
        return Err(invalid(
            "detector needs trials >= 1, fit_size >= 3 and eval_size >= 1",
        ));
    }
    let mut id = Vec::with_capacity(cfg.trials);
    let mut ood = Vec::with_capacity(cfg.trials);
    let mut degenerate = 0;
    for t in 0..cfg.trials as u64 {
        let mut attempt = 0u64;
        let region = loop {
            let s = derive_seed(seed, &[t, SampleSet::Fit.tag(), attempt]);
            match fit_region(&draw(SampleSet::Fit, cfg.fit_size, s)?, cfg.confidence) {
                Ok(r) => break r,
                Err(Error::DegenerateFit(msg)) => {
                    degenerate += 1;
                    attempt += 1;
                    if attempt as usize > cfg.max_refits {
                        return Err(Error::DegenerateFit(format!("trial {t}: {msg}")));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        for (set, out) in [
            (SampleSet::InDistribution, &mut id),
            (SampleSet::OutOfDistribution, &mut ood),
        ] {
            let s = derive_seed(seed, &[t, set.tag(), attempt]);
            out.push(region.inclusion_pct(&draw(set, cfg.eval_size, s)?));
        }
    }
    let report = |source: &str, per_trial: Vec<f64>| {
        let (m, sd) = mean_std(&per_trial);
        DetectorReport {
            source: source.into(),
            fit_source: tags.0.into(),
            inclusion_pct_mean: m,
            inclusion_pct_std: sd,
            trials: cfg.trials,
            fit_size: cfg.fit_size,
            eval_size: cfg.eval_size,
            degenerate_fits: degenerate,
            per_trial,
        }
    };
    Ok((report(tags.1, id), report(tags.2, ood)))
}

/// Detector trials on a transformer: each trial samples fresh fit and
/// in-distribution prompts from `id_dist` and evaluation prompts from
/// `ood_dist`, and tests their first two signature coordinates.
pub fn detector_trial<T: Scalar>(
    params: &Params<T>,
    basis: &CanonicalBasis,
    id_dist: &PromptDistribution,
    ood_dist: &PromptDistribution,
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<(DetectorReport, DetectorReport)> {
    let draw = |set: SampleSet, n: usize, s: u64| -> Result<Vec<[f64; 2]>> {
        let dist = if set == SampleSet::OutOfDistribution {
            ood_dist
        } else {
            id_dist
        };
        let prompts = sample_batch(dist, n, s)?;
        let batch = collect(params, &prompts, &dist.tag)?;
        Ok(signatures(&batch, basis)?.iter().map(|s| s.c2()).collect())
    };
    run_trials(cfg, seed, (&id_dist.tag, &id_dist.tag, &ood_dist.tag), draw)
}

/// Rows shaped like a results table: `fit_source, eval_source, mean, std, trials, fit_size, eval_size`.
pub fn write_reports_csv<W: Write>(out: W, reports: &[&DetectorReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "fit_source",
        "eval_source",
        "inclusion_pct_mean",
        "inclusion_pct_std",
        "trials",
        "fit_size",
        "eval_size",
        "degenerate_fits",
    ])?;
    for r in reports {
        w.write_record([
            r.fit_source.clone(),
            r.source.clone(),
            r.inclusion_pct_mean.to_string(),
            r.inclusion_pct_std.to_string(),
            r.trials.to_string(),
            r.fit_size.to_string(),
            r.eval_size.to_string(),
            r.degenerate_fits.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
