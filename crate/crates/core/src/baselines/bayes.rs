use super::{autoregressive, PredictionTrace};
use crate::error::{invalid, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, spd_inverse, Matrix};
use crate::promptgen::Prompt;
use crate::rng;

/// Gaussian posterior over regression weights under the prior `N(0, τ² I)` and
/// likelihood `N(Xβ, σ² I)`.
#[derive(Clone, Debug)]
pub struct BayesPosterior {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    /// Cholesky factor of the posterior precision `XᵀX/σ² + I/τ²`.
    precision_chol: Matrix,
}

fn check(tau: f64, sigma: f64) -> Result<()> {
    if !(tau > 0.0 && sigma > 0.0) {
        return Err(invalid(format!(
            "bayes needs tau, sigma > 0 (tau={tau}, sigma={sigma})"
        )));
    }
    Ok(())
}

pub fn bayes_posterior(x: &Matrix, y: &[f64], tau: f64, sigma: f64) -> Result<BayesPosterior> {
    check(tau, sigma)?;
    let d = x.cols();
    let s2 = sigma * sigma;
    let mut precision = x.t_matmul(x).scale(1.0 / s2);
    for i in 0..d {
        precision[(i, i)] += 1.0 / (tau * tau);
    }
    let l = cholesky(&precision)?;
    let rhs: Vec<f64> = x.t_matvec(y).iter().map(|v| v / s2).collect();
    let mean = cholesky_solve(&l, &rhs);
    let cov = spd_inverse(&precision)?;
    Ok(BayesPosterior {
        mean,
        cov,
        precision_chol: l,
    })
}

impl BayesPosterior {
    /// One draw `μ + L⁻ᵀ z`, whose covariance is the inverse precision.
    pub fn sample(&self, g: &mut rng::Rng) -> Vec<f64> {
        let d = self.mean.len();
        let z = rng::normal_vec(g, d);
        let l = &self.precision_chol;
        let mut e = z;
        for i in (0..d).rev() {
            for k in (i + 1)..d {
                e[i] -= l[(k, i)] * e[k];
            }
            e[i] /= l[(i, i)];
        }
        self.mean.iter().zip(&e).map(|(m, v)| m + v).collect()
    }
}

/// Mean over `m` posterior draws of `βᵀ query`. An empty context samples the prior.
pub fn bayes_predict(
    x: &Matrix,
    y: &[f64],
    query: &[f64],
    tau: f64,
    sigma: f64,
    m: usize,
    seed: u64,
) -> Result<f64> {
    if m == 0 {
        return Err(invalid("bayes needs at least one posterior sample"));
    }
    let post = bayes_posterior(x, y, tau, sigma)?;
    let mut g = rng::rng_from_seed(seed);
    let total: f64 = (0..m).map(|_| dot(&post.sample(&mut g), query)).sum();
    Ok(total / m as f64)
}

pub fn bayes_trace(
    prompt: &Prompt,
    tau: f64,
    sigma: f64,
    m: usize,
    seed: u64,
) -> Result<PredictionTrace> {
    check(tau, sigma)?;
    if m == 0 {
        return Err(invalid("bayes needs at least one posterior sample"));
    }
    let preds = autoregressive(prompt, |x, y, q, pos| {
        bayes_predict(
            x,
            y,
            q,
            tau,
            sigma,
            m,
            rng::derive_seed(seed, &[pos as u64]),
        )
    })?;
    Ok(PredictionTrace::from_predictions("bayes", prompt, preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::ridge_fit;
    use crate::promptgen::{sample_prompt, PromptDistribution};

    #[test]
    fn posterior_mean_is_ridge() {
        for seed in 0..20 {
            let p = sample_prompt(&PromptDistribution::full(4, 9).with_noise(0.3), seed).unwrap();
            let (tau, sigma) = (0.7, 0.4);
            let ctx = p.xs.row_range(0, 6);
            let post = bayes_posterior(&ctx, &p.ys[..6], tau, sigma).unwrap();
            let ridge = ridge_fit(&ctx, &p.ys[..6], sigma * sigma / (tau * tau)).unwrap();
            for (a, b) in post.mean.iter().zip(&ridge) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn monte_carlo_converges_to_posterior_mean() {
        let p = sample_prompt(&PromptDistribution::full(3, 5), 8).unwrap();
        let ctx = p.xs.row_range(0, 2);
        let q = p.x(2);
        let post = bayes_posterior(&ctx, &p.ys[..2], 1.0, 1.0).unwrap();
        let exact = dot(&post.mean, q);
        let sd = dot(q, &post.cov.matvec(q)).sqrt();
        let m = 10_000;
        let mc = bayes_predict(&ctx, &p.ys[..2], q, 1.0, 1.0, m, 5).unwrap();
        assert!(
            (mc - exact).abs() < 3.0 * sd / (m as f64).sqrt(),
            "{mc} vs {exact}"
        );
    }

    #[test]
    fn samples_have_posterior_covariance() {
        let p = sample_prompt(&PromptDistribution::full(2, 4), 1).unwrap();
        let ctx = p.xs.row_range(0, 3);
        let post = bayes_posterior(&ctx, &p.ys[..3], 1.0, 0.5).unwrap();
        let mut g = rng::rng_from_seed(3);
        let n = 40_000;
        let mut acc = [[0.0; 2]; 2];
        for _ in 0..n {
            let b = post.sample(&mut g);
            let c = [b[0] - post.mean[0], b[1] - post.mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += c[i] * c[j] / n as f64;
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (acc[i][j] - post.cov[(i, j)]).abs()
                        < 0.05 * post.cov[(0, 0)].max(post.cov[(1, 1)])
                );
            }
        }
    }

    #[test]
    fn empty_context_samples_the_prior() {
        let q = [1.0, -2.0];
        let empty = Matrix::zeros(0, 2);
        let tau = 2.0;
        let m = 16;
        let got = bayes_predict(&empty, &[], &q, tau, 1.0, m, 4).unwrap();
        let mut g = rng::rng_from_seed(4);
        let expect: f64 = (0..m)
            .map(|_| {
                let z = rng::normal_vec(&mut g, 2);
                tau * dot(&z, &q)
            })
            .sum::<f64>()
            / m as f64;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn trace_starts_at_zero_and_validates() {
        let p = sample_prompt(&PromptDistribution::full(3, 4), 2).unwrap();
        let t = bayes_trace(&p, 1.0, 1.0, 8, 0).unwrap();
        assert_eq!(t.predictions[0], 0.0);
        assert!(bayes_trace(&p, 0.0, 1.0, 8, 0).is_err());
        assert!(bayes_trace(&p, 1.0, 1.0, 0, 0).is_err());
    }
}
