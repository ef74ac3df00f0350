//! Acceptance criteria 1-11. Each criterion prints one PASS/FAIL line.
//!
//! Criteria 5-11 need the desk-scale `t_par` and `t_weight` checkpoints. They
//! are read from `$ICL_ACCEPTANCE_CKPT_DIR` (default `target/icl-acceptance`)
//! and trained there first when missing or stale (about 1.5 h each on one core).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use icl_core::baselines::{bayes_posterior, gd_fit, kernel_ridge_predict, ols_trace, ridge_fit};
use icl_core::linalg::{chi2_quantile_df2, gaussian_matrix, lstsq, norm, pinv, qr, svd};
use icl_core::ooddetect::{fit_region, sample_gaussian2};
use icl_core::promptgen::{make_subspace_pair, sample_batch, sample_prompt, tokenize};
use icl_core::rng::{derive_seed, rng_from_seed};
use icl_core::transformer::{
    curriculum_state, forward, load_checkpoint, loss_and_grad, save_checkpoint, Curriculum,
    ModelConfig, Params, TrainConfig, Trainer,
};
use icl_core::transformer::{implicit_weight, SequenceModel};
use icl_core::{Matrix, PromptDistribution, TokenSequence};
use icl_spectra::registry::{cache_state, model_spec, CacheState};
use icl_spectra::{run_experiment, train_model, Experiment, ExperimentConfig, RunOptions};
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = anyhow::Result<Outcome>;

fn report(line: &str) {
    // Bypasses libtest capture so the lines always reach the terminal.
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn run(
    n: usize,
    name: &str,
    budget: Option<Duration>,
    f: impl FnOnce() -> Check,
    failures: &mut Vec<String>,
) {
    let start = Instant::now();
    let outcome = f().unwrap_or_else(|e| Outcome::new(false, format!("error: {e:#}")));
    let elapsed = start.elapsed();
    let in_budget = budget.is_none_or(|b| elapsed <= b);
    let pass = outcome.pass && in_budget;
    let budget_note = budget
        .map(|b| format!(" / budget {:.0} s", b.as_secs_f64()))
        .unwrap_or_default();
    let line = format!(
        "criterion {n:>2} {name}: {} ({}) [{:.1} s{budget_note}]",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64()
    );
    report(&line);
    if !pass {
        failures.push(line);
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- criterion 1

fn baselines_oracle() -> Check {
    let d = 8;
    let prompts = sample_batch(&PromptDistribution::full(d, 16), 1000, 101)?;
    let traces: Vec<_> = prompts.iter().map(ols_trace).collect::<Result<_, _>>()?;
    let mse = icl_core::baselines::mean_squared_error(&traces)?;
    let ols_worst = mse[d..].iter().copied().fold(0.0, f64::max);

    let mut ridge_gap: f64 = 0.0;
    for p in prompts.iter().take(200) {
        for i in d + 1..=p.k() {
            let x = p.xs.row_range(0, i);
            let ols = lstsq(&x, &p.ys[..i])?;
            ridge_gap = ridge_gap.max(max_abs(&ridge_fit(&x, &p.ys[..i], 0.0)?, &ols));
        }
    }

    let mut bayes_gap: f64 = 0.0;
    let mut g = rng_from_seed(102);
    for inst in 0..100u64 {
        let (n, dd) = (g.random_range(1..20), g.random_range(1..8));
        let x = gaussian_matrix(n, dd, derive_seed(103, &[inst]));
        let y: Vec<f64> = gaussian_matrix(n, 1, derive_seed(104, &[inst])).into_vec();
        let (tau, sigma) = (g.random_range(0.3..3.0), g.random_range(0.1..2.0));
        let post = bayes_posterior(&x, &y, tau, sigma)?;
        let ridge = ridge_fit(&x, &y, sigma * sigma / (tau * tau))?;
        bayes_gap = bayes_gap.max(max_abs(&post.mean, &ridge));
    }

    // Two points in 1-d: K = [[1, r], [r, 1]] with r = exp(-(x1 - x2)^2 / 2σ²),
    // α = (K + λI)^{-1} y by the 2x2 inverse, f(q) = α1 k(x1, q) + α2 k(x2, q).
    let mut kernel_gap: f64 = 0.0;
    for inst in 0..50u64 {
        let v = gaussian_matrix(1, 6, derive_seed(105, &[inst])).into_vec();
        let (x1, x2, y1, y2, q) = (v[0], v[1], v[2], v[3], v[4]);
        let (lambda, sigma) = (0.01 + v[5].abs() * 0.1, 0.5 + (inst as f64) * 0.05);
        let k = |a: f64, b: f64| (-(a - b).powi(2) / (2.0 * sigma * sigma)).exp();
        let (a, r) = (1.0 + lambda, k(x1, x2));
        let det = a * a - r * r;
        let alpha1 = (a * y1 - r * y2) / det;
        let alpha2 = (a * y2 - r * y1) / det;
        let hand = alpha1 * k(x1, q) + alpha2 * k(x2, q);
        let x = Matrix::new(2, 1, vec![x1, x2])?;
        kernel_gap = kernel_gap
            .max((kernel_ridge_predict(&x, &[y1, y2], &[q], lambda, sigma)? - hand).abs());
    }

    let mut gd_gap: f64 = 0.0;
    for inst in 0..5u64 {
        let x = gaussian_matrix(32, 4, derive_seed(106, &[inst]));
        let y = gaussian_matrix(32, 1, derive_seed(107, &[inst])).into_vec();
        let fit = gd_fit(&x, &y, 1e-3, 50_000, inst)?;
        gd_gap = gd_gap.max(max_abs(&fit.beta, &lstsq(&x, &y)?));
    }

    let pass = ols_worst < 1e-10
        && ridge_gap < 1e-8
        && bayes_gap < 1e-8
        && kernel_gap < 1e-10
        && gd_gap < 1e-4;
    Ok(Outcome::new(
        pass,
        format!(
            "OLS MSE(pos > d) {ols_worst:.1e} < 1e-10; |ridge0 - OLS| {ridge_gap:.1e} < 1e-8; \
             |bayes - ridge| {bayes_gap:.1e} < 1e-8; kernel 2x2 {kernel_gap:.1e} < 1e-10; |GD - OLS| {gd_gap:.1e} < 1e-4"
        ),
    ))
}

// ---------------------------------------------------------------- criterion 2

fn rank_deficient(rows: usize, cols: usize, rank: usize, seed: u64) -> Matrix {
    gaussian_matrix(rows, rank, derive_seed(seed, &[0])).matmul(&gaussian_matrix(
        rank,
        cols,
        derive_seed(seed, &[1]),
    ))
}

fn orthonormality_gap(q: &Matrix) -> f64 {
    q.t_matmul(q).max_abs_diff(&Matrix::identity(q.cols()))
}

fn linalg_suite() -> Check {
    let mut g = rng_from_seed(201);
    let mut worst = BTreeMap::<&str, f64>::new();
    let mut bump = |k: &'static str, v: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max(v);
    };
    let mut deficient = 0;
    for s in 0..500u64 {
        let (m, n) = (g.random_range(1..13), g.random_range(1..13));
        let full = m.min(n);
        let rank = if s % 3 == 0 {
            g.random_range(0..=full)
        } else {
            full
        };
        deficient += (rank < full) as usize;
        let a = if rank == full {
            gaussian_matrix(m, n, derive_seed(202, &[s]))
        } else {
            rank_deficient(m, n, rank, derive_seed(203, &[s]))
        };
        let p = pinv(&a, None)?;
        bump("A A+ A = A", a.matmul(&p).matmul(&a).max_abs_diff(&a));
        bump("A+ A A+ = A+", p.matmul(&a).matmul(&p).max_abs_diff(&p));
        let ap = a.matmul(&p);
        bump("(A A+)^T = A A+", ap.transpose().max_abs_diff(&ap));
        let pa = p.matmul(&a);
        bump("(A+ A)^T = A+ A", pa.transpose().max_abs_diff(&pa));
        let s_ = svd(&a)?;
        bump("svd reconstruction", s_.reconstruct().max_abs_diff(&a));
        bump("svd U orthonormal", orthonormality_gap(&s_.u));
        bump("svd V orthonormal", orthonormality_gap(&s_.v));
        let tall = if m >= n { a.clone() } else { a.transpose() };
        let f = qr(&tall)?;
        bump("qr reconstruction", f.q.matmul(&f.r).max_abs_diff(&tall));
        bump("qr Q orthonormal", orthonormality_gap(&f.q));
    }
    let chi = chi2_quantile_df2(0.95)?;
    let worst_all = worst.values().copied().fold(0.0, f64::max);
    let (name, _) = worst
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("entries");
    let pass = worst_all < 1e-8 && (chi - 5.99146).abs() < 1e-5;
    Ok(Outcome::new(
        pass,
        format!(
            "500 shapes ({deficient} rank-deficient): worst identity error {worst_all:.1e} ({name}) < 1e-8; \
             chi2_df2(0.95) = {chi:.6}"
        ),
    ))
}

// ---------------------------------------------------------------- criterion 3

fn projection_properties() -> Check {
    let mut g = rng_from_seed(301);
    let mut worst: f64 = 0.0;
    for s in 0..100u64 {
        let d = g.random_range(2..21);
        let q = g.random_range(1..d);
        let pair = make_subspace_pair(d, q, derive_seed(302, &[s]))?;
        let (a, b) = (&pair.p_a, &pair.p_b);
        let mut errs = vec![
            a.matmul(a).max_abs_diff(a),
            b.matmul(b).max_abs_diff(b),
            a.transpose().max_abs_diff(a),
            b.transpose().max_abs_diff(b),
            a.matmul(b).max_abs(),
            (a.trace() - q as f64).abs(),
        ];
        for t in 0..5 {
            let x = gaussian_matrix(d, 1, derive_seed(303, &[s, t])).into_vec();
            let (na, nb) = (norm(&a.matvec(&x)), norm(&b.matvec(&x)));
            errs.push((norm(&x).powi(2) - na * na - nb * nb).abs());
        }
        worst = errs.into_iter().fold(worst, f64::max);
    }
    Ok(Outcome::new(
        worst < 1e-9,
        format!("100 pairs: worst of P^2-P, P^T-P, P_A P_B, tr-q, Pythagoras = {worst:.1e} < 1e-9"),
    ))
}

// ---------------------------------------------------------------- criterion 4

fn tiny_model(seed: u64) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        hidden: 8,
        token_dim: 3,
        max_positions: 11,
        seed,
    }
}

fn gradient_check() -> anyhow::Result<f64> {
    let cfg = tiny_model(401);
    let mut params: Params<f64> = Params::<f32>::init(&cfg)?.cast();
    let mut g = rng_from_seed(402);
    for v in params.as_mut_slice() {
        *v += 0.1 * icl_core::rng::normal(&mut g);
    }
    let dist = PromptDistribution::full(3, 5);
    let prompts = sample_batch(&dist, 3, 403)?;
    let seqs: Vec<TokenSequence> = prompts.iter().map(tokenize).collect();
    let targets: Vec<Vec<f64>> = prompts.iter().map(|p| p.ys.clone()).collect();
    let analytic = loss_and_grad(&params, &seqs, &targets, true)?.grad;
    let h = 1e-5;
    let mut numeric = vec![0.0; analytic.len()];
    for (i, slot) in numeric.iter_mut().enumerate() {
        let orig = params.as_slice()[i];
        params.as_mut_slice()[i] = orig + h;
        let up = loss_and_grad(&params, &seqs, &targets, true)?.loss;
        params.as_mut_slice()[i] = orig - h;
        let down = loss_and_grad(&params, &seqs, &targets, true)?.loss;
        params.as_mut_slice()[i] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    Ok(norm(&diff) / norm(&numeric))
}

fn causality_check() -> anyhow::Result<f64> {
    let params: Params<f64> = Params::<f32>::init(&tiny_model(404))?.cast();
    let mut g = rng_from_seed(405);
    let mut worst: f64 = 0.0;
    for s in 0..20u64 {
        let seq = tokenize(&sample_prompt(
            &PromptDistribution::full(3, 5),
            derive_seed(406, &[s]),
        )?);
        let base = forward(&params, &seq, false)?.predictions;
        let n = seq.len();
        for j in 0..n - 1 {
            let mut order: Vec<usize> = (j + 1..n).collect();
            order.shuffle(&mut g);
            let mut tokens = seq.tokens.clone();
            for (dst, &src) in (j + 1..n).zip(&order) {
                tokens.row_mut(dst).copy_from_slice(seq.tokens.row(src));
            }
            for i in j + 1..n {
                for v in tokens.row_mut(i) {
                    *v += icl_core::rng::normal(&mut g);
                }
            }
            let permuted = TokenSequence {
                tokens,
                x_positions: seq.x_positions.clone(),
            };
            let out = forward(&params, &permuted, false)?.predictions;
            let upto = seq.x_positions.iter().filter(|&&p| p <= j).count();
            worst = worst.max(max_abs(&base[..upto], &out[..upto]));
        }
    }
    Ok(worst)
}

fn checkpoint_round_trip() -> anyhow::Result<bool> {
    let cfg = tiny_model(407);
    let train = TrainConfig {
        steps: 3,
        batch_size: 4,
        curriculum: Curriculum::inactive(5),
        ..TrainConfig::desk(408)
    };
    let mut t = Trainer::new(&cfg, &train, &PromptDistribution::full(3, 5))?;
    t.run(None, |_| {})?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("rt.ckpt");
    t.save(&path)?;
    let ck = load_checkpoint(&path)?;
    let bits = |x: &[f32]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same_params = bits(ck.params.as_slice()) == bits(t.params().as_slice());
    let resaved = dir.path().join("rt2.ckpt");
    save_checkpoint(
        &resaved,
        &ck.params,
        ck.optimizer.as_ref(),
        ck.header.train.as_ref(),
        ck.header.step,
        &ck.header.meta,
    )?;
    Ok(same_params && std::fs::read(&path)? == std::fs::read(&resaved)?)
}

fn transformer_correctness() -> Check {
    let rel = gradient_check()?;
    let causal = causality_check()?;
    let round_trip = checkpoint_round_trip()?;
    // Reference schedule at d = 20, k = 40: start (15, 11), then (-1, +2) every 2000 steps.
    let c = Curriculum::paper();
    let expected = [
        (0, (15, 11)),
        (2000, (14, 13)),
        (4000, (13, 15)),
        (30_000, (0, 40)),
    ];
    let schedule_ok = expected
        .iter()
        .all(|&(s, want)| curriculum_state(s, &c, 20, 40) == want);
    let pass = rel < 1e-4 && causal < 1e-12 && round_trip && schedule_ok;
    Ok(Outcome::new(
        pass,
        format!(
            "gradient rel. error {rel:.1e} < 1e-4; causal max change {causal:.1e}; \
             checkpoint bit-exact {round_trip}; curriculum at {{0, 2000, 4000, 30000}} exact {schedule_ok}"
        ),
    ))
}

// ------------------------------------------------------- desk-scale criteria

fn checkpoint_dir() -> PathBuf {
    std::env::var_os("ICL_ACCEPTANCE_CKPT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/icl-acceptance")
        })
}

struct Desk {
    ckpt: PathBuf,
    out: tempfile::TempDir,
}

impl Desk {
    fn cfg(&self, models: &[&str]) -> ExperimentConfig {
        ExperimentConfig {
            models: Some(models.iter().map(|s| s.to_string()).collect()),
            ..ExperimentConfig::default()
        }
    }

    fn opts(&self, run: &str, threads: usize) -> RunOptions {
        RunOptions {
            checkpoint_dir: Some(self.ckpt.clone()),
            threads,
            ..RunOptions::new(&self.out.path().join(run))
        }
    }

    fn run(&self, exp: Experiment, cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
        let opts = self.opts(exp.id(), 1);
        run_experiment(exp, cfg, &opts)?;
        Ok(opts.out)
    }
}

/// Ensures both desk checkpoints exist; returns the training time spent here.
fn prepare_desk(dir: &Path) -> anyhow::Result<Duration> {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    for name in ["t_par", "t_weight"] {
        let spec = model_spec(name, &cfg)?;
        let state = cache_state(&spec, &spec.path_in(dir));
        if state != CacheState::Complete {
            report(&format!(
                "training {name} into {} ({state:?})",
                dir.display()
            ));
            let opts = RunOptions {
                checkpoint_dir: Some(dir.to_path_buf()),
                verbose: true,
                ..RunOptions::new(&dir.join("runs"))
            };
            train_model(name, &cfg, &opts)?;
        }
    }
    Ok(start.elapsed())
}

type Row = BTreeMap<String, String>;

fn read_csv(path: &Path) -> anyhow::Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    Ok(r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(header
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect())
        })
        .collect::<Result<_, csv::Error>>()?)
}

fn num(row: &Row, key: &str) -> anyhow::Result<f64> {
    Ok(row
        .get(key)
        .ok_or_else(|| anyhow::anyhow!("missing column {key}"))?
        .parse()?)
}

fn find<'a>(rows: &'a [Row], keys: &[(&str, &str)]) -> anyhow::Result<&'a Row> {
    rows.iter()
        .find(|r| {
            keys.iter()
                .all(|(k, v)| r.get(*k).map(String::as_str) == Some(*v))
        })
        .ok_or_else(|| anyhow::anyhow!("no row with {keys:?}"))
}

fn generalization_gap(desk: &Desk) -> Check {
    let dir = desk.run(Experiment::InputRestriction, &desk.cfg(&["t_par"]))?;
    let finals = read_csv(&dir.join("final_mse.csv"))?;
    let par = find(&finals, &[("model", "t_par"), ("distribution", "d_par")])?;
    let perp = find(&finals, &[("model", "t_par"), ("distribution", "d_perp")])?;
    let (norm_par, raw_par) = (num(par, "normalized_final_mse")?, num(par, "final_mse")?);
    let raw_perp = num(perp, "final_mse")?;
    let curves = read_csv(&dir.join("mse_curves.csv"))?;
    let d = ExperimentConfig::default().dims().0;
    let mut worst_ratio = f64::INFINITY;
    for row in curves
        .iter()
        .filter(|r| r["distribution"] == "d_par" && r["model"] == "t_par")
    {
        let pos = &row["position"];
        if pos.parse::<usize>()? > d {
            let ols = find(
                &curves,
                &[
                    ("model", "ols"),
                    ("distribution", "d_par"),
                    ("position", pos),
                ],
            )?;
            worst_ratio =
                worst_ratio.min(num(row, "mse")? / num(ols, "mse")?.max(f64::MIN_POSITIVE));
        }
    }
    let ratio = raw_perp / raw_par;
    let pass = norm_par <= 0.3 && ratio >= 5.0 && worst_ratio >= 10.0;
    Ok(Outcome::new(
        pass,
        format!(
            "T_par normalized final MSE on D_par {norm_par:.4} <= 0.3; D_perp/D_par {ratio:.1}x >= 5x; \
             min over positions > d of T_par/OLS {worst_ratio:.1e} >= 10"
        ),
    ))
}

fn blend_monotonicity(desk: &Desk) -> Check {
    let cfg = ExperimentConfig {
        blend_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        ..desk.cfg(&["t_par"])
    };
    let dir = desk.run(Experiment::Blend, &cfg)?;
    let rows = read_csv(&dir.join("blend.csv"))?;
    let series = |model: &str, key: &str| -> anyhow::Result<Vec<f64>> {
        rows.iter()
            .filter(|r| r["model"] == model)
            .map(|r| num(r, key))
            .collect()
    };
    let t_par = series("t_par", "final_mse")?;
    let violations: Vec<f64> = t_par
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| w[1] / w[0] - 1.0)
        .collect();
    let monotone = violations.len() <= 1 && violations.iter().all(|&v| v <= 0.10);
    let ols = series("ols", "normalized_final_mse")?;
    let (lo, hi) = ols
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    let mean = ols.iter().sum::<f64>() / ols.len() as f64;
    let spread = (hi - lo) / mean;
    // Noiseless OLS recovers the task exactly at every t; its row is then
    // rounding residue, flat on the scale of E[y^2] however its relative spread looks.
    let exact = hi < icl_spectra::experiments::EXACT_TOL;
    let flat = spread <= 0.2 || exact;
    Ok(Outcome::new(
        monotone && flat,
        format!(
            "T_par final MSE over t = {:?}: {} increasing pair(s) (<= 1, each <= 10%); \
             OLS normalized row max {hi:.1e} (exact below {:.0e}: {exact}), relative spread {spread:.2}",
            cfg.blend_grid,
            violations.len(),
            icl_spectra::experiments::EXACT_TOL
        ),
    ))
}

fn spectral_signature(desk: &Desk) -> Check {
    let dir = desk.run(Experiment::Spectra, &desk.cfg(&["t_par"]))?;
    let sig = read_csv(&dir.join("signature_summary.csv"))?;
    let spec = read_csv(&dir.join("spectrum_t_par.csv"))?;
    let mut pass = true;
    let mut parts = Vec::new();
    for j in ["1", "2"] {
        let par = num(
            find(&sig, &[("source", "d_par"), ("index", j)])?,
            "mean_cos",
        )?;
        let perp = num(
            find(&sig, &[("source", "d_perp"), ("index", j)])?,
            "mean_cos",
        )?;
        let s_par = num(find(&spec, &[("source", "d_par"), ("index", j)])?, "std")?;
        let s_perp = num(find(&spec, &[("source", "d_perp"), ("index", j)])?, "std")?;
        pass &= par >= 0.8 && par - perp >= 0.15 && s_perp > s_par;
        parts.push(format!(
            "mean c{j} S_par {par:.3} (>= 0.8), S_perp {perp:.3} (gap {:.3} >= 0.15); \
             std sigma{j} S_perp {s_perp:.3} (> S_par {s_par:.3})",
            par - perp
        ));
    }
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn ood_detector(desk: &Desk) -> Check {
    let dir = desk.run(Experiment::OodDetector, &desk.cfg(&["t_par"]))?;
    let rows = read_csv(&dir.join("ood_detector.csv"))?;
    let id = find(&rows, &[("model", "t_par"), ("eval_source", "d_par")])?;
    let ood = find(&rows, &[("model", "t_par"), ("eval_source", "d_perp")])?;
    let (id_m, id_s) = (
        num(id, "inclusion_pct_mean")?,
        num(id, "inclusion_pct_std")?,
    );
    let (ood_m, ood_s) = (
        num(ood, "inclusion_pct_mean")?,
        num(ood, "inclusion_pct_std")?,
    );
    let trials = num(id, "trials")?;

    let mu = [0.9, 0.7];
    let sigma = [[0.004, 0.0015], [0.0015, 0.003]];
    let region = fit_region(&sample_gaussian2(mu, sigma, 100_000, 801)?, 0.95)?;
    let synthetic = region.inclusion_pct(&sample_gaussian2(mu, sigma, 100_000, 802)?);

    let pass = trials == 20.0
        && id_m >= 80.0
        && ood_m <= 50.0
        && id_m - ood_m >= 30.0
        && (synthetic - 95.0).abs() <= 2.0;
    Ok(Outcome::new(
        pass,
        format!(
            "{trials} trials: S_par {id_m:.2}% +- {id_s:.2} >= 80; S_perp {ood_m:.2}% +- {ood_s:.2} <= 50; \
             gap {:.1} >= 30; synthetic 100k draws {synthetic:.2}% in 95 +- 2",
            id_m - ood_m
        ),
    ))
}

fn correlation(desk: &Desk) -> Check {
    let dir = desk.run(Experiment::Correlation, &desk.cfg(&["t_par"]))?;
    let rows = read_csv(&dir.join("correlation.csv"))?;
    let row = find(&rows, &[("model", "t_par")])?;
    let (r, p) = (num(row, "r")?, num(row, "p_value")?);
    Ok(Outcome::new(
        r < 0.0 && p < 0.01,
        format!(
            "pooled D_par + D_perp, {} prompts: r = {r:.3} < 0, p = {p:.2e} < 0.01",
            row["pairs"]
        ),
    ))
}

struct Oracle(Vec<f64>);

impl SequenceModel for Oracle {
    fn predict(&self, seqs: &[TokenSequence]) -> icl_core::Result<Vec<Vec<f64>>> {
        Ok(seqs
            .iter()
            .map(|s| {
                s.x_positions
                    .iter()
                    .map(|&p| icl_core::linalg::dot(&self.0, s.tokens.row(p)))
                    .collect()
            })
            .collect())
    }
}

fn implicit_weights(desk: &Desk) -> Check {
    let dir = desk.run(Experiment::ImplicitWeights, &desk.cfg(&["t_weight"]))?;
    let rows = read_csv(&dir.join("implicit_weights_summary.csv"))?;
    let row = find(&rows, &[("model", "t_weight")])?;
    let (a, b) = (num(row, "mean_norm_p_a")?, num(row, "mean_norm_p_b")?);

    let cfg = ExperimentConfig::default();
    let (d, q, k) = cfg.dims();
    let pair = make_subspace_pair(d, q, cfg.pair_seed)?;
    let dist = PromptDistribution::weight_restricted(d, k, &pair.p_a, "d_weight_a");
    let mut oracle_b: f64 = 0.0;
    for s in 0..20u64 {
        let w = pair
            .p_a
            .matvec(&gaussian_matrix(d, 1, derive_seed(1001, &[s])).into_vec());
        let ctx = sample_prompt(&dist, derive_seed(1002, &[s]))?;
        let queries = gaussian_matrix(4 * d, d, derive_seed(1003, &[s]));
        let beta = implicit_weight(&Oracle(w), &ctx, &queries)?.beta;
        oracle_b = oracle_b.max(norm(&pair.p_b.matvec(&beta)));
    }
    Ok(Outcome::new(
        a >= 3.0 * b && oracle_b < 1e-8,
        format!(
            "T_weight mean |P_A b| {a:.3} >= 3 x mean |P_B b| {b:.3} ({:.1}x); oracle max |P_B b| {oracle_b:.1e} < 1e-8",
            a / b
        ),
    ))
}

fn csv_files(dir: &Path) -> anyhow::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            out.insert(
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p)?,
            );
        }
    }
    Ok(out)
}

const TINY: &str = r#"
d = 4
q = 2
k = 8
eval_batch = 24
pool_size = 4
detector_fit = 8
detector_eval = 8
detector_trials = 2
implicit_prompts = 4
noise_sigma = 0.1
vary_q = [1, 2]
scales = [0.5, 1.0, 2.0]
blend_grid = [0.0, 0.5, 1.0]
train_steps = 20
batch_size = 8
checkpoint_every = 0
model_layers = 1
model_heads = 2
model_hidden = 16
"#;

fn reproducibility(desk: &Desk) -> Check {
    let mut compared = 0;
    let mut mismatched = Vec::new();
    let desk_runs: [(Experiment, &[&str]); 6] = [
        (Experiment::InputRestriction, &["t_par"]),
        (Experiment::Blend, &["t_par"]),
        (Experiment::Spectra, &["t_par"]),
        (Experiment::OodDetector, &["t_par"]),
        (Experiment::Correlation, &["t_par"]),
        (Experiment::ImplicitWeights, &["t_weight"]),
    ];
    for (exp, models) in desk_runs {
        let cfg = desk.cfg(models);
        let a = desk.opts(&format!("{}_repro_a", exp.id()), 1);
        let b = desk.opts(&format!("{}_repro_b", exp.id()), 2);
        run_experiment(exp, &cfg, &a)?;
        run_experiment(exp, &cfg, &b)?;
        compared += 1;
        if csv_files(&a.out)? != csv_files(&b.out)? {
            mismatched.push(exp.id());
        }
    }
    let tiny = ExperimentConfig::from_toml(TINY, Path::new("tiny.toml"))?;
    let tiny_ckpt = desk.out.path().join("tiny_checkpoints");
    for exp in Experiment::ALL {
        let a = RunOptions {
            checkpoint_dir: Some(tiny_ckpt.clone()),
            train_first: true,
            ..RunOptions::new(&desk.out.path().join(format!("tiny_{}_a", exp.id())))
        };
        let b = RunOptions {
            out: desk.out.path().join(format!("tiny_{}_b", exp.id())),
            threads: 2,
            ..a.clone()
        };
        run_experiment(exp, &tiny, &a)?;
        run_experiment(exp, &tiny, &b)?;
        compared += 1;
        if csv_files(&a.out)? != csv_files(&b.out)? {
            mismatched.push(exp.id());
        }
    }
    Ok(Outcome::new(
        mismatched.is_empty(),
        format!(
            "{compared} experiment re-runs (6 desk, 11 tiny-model), differing CSVs: {}",
            if mismatched.is_empty() {
                "none".to_string()
            } else {
                mismatched.join(", ")
            }
        ),
    ))
}

#[test]
fn acceptance_criteria() {
    let mut failures = Vec::new();
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    run(
        1,
        "baseline oracles",
        min(1),
        baselines_oracle,
        &mut failures,
    );
    run(2, "linalg properties", min(1), linalg_suite, &mut failures);
    run(
        3,
        "projection properties",
        Some(Duration::from_secs(1)),
        projection_properties,
        &mut failures,
    );
    run(
        4,
        "transformer correctness",
        min(5),
        transformer_correctness,
        &mut failures,
    );

    let ckpt = checkpoint_dir();
    match prepare_desk(&ckpt) {
        Ok(t) => report(&format!(
            "desk checkpoints in {} ({:.0} s spent training in this run)",
            ckpt.display(),
            t.as_secs_f64()
        )),
        Err(e) => {
            let line = format!("desk checkpoints unavailable: {e:#}");
            report(&line);
            failures.push(line);
        }
    }
    let desk = Desk {
        ckpt,
        out: tempfile::tempdir().expect("temp dir"),
    };
    run(
        5,
        "desk generalization gap",
        min(10),
        || generalization_gap(&desk),
        &mut failures,
    );
    run(
        6,
        "blend monotonicity",
        min(10),
        || blend_monotonicity(&desk),
        &mut failures,
    );
    run(
        7,
        "spectral signature",
        min(10),
        || spectral_signature(&desk),
        &mut failures,
    );
    run(
        8,
        "OOD detector",
        min(10),
        || ood_detector(&desk),
        &mut failures,
    );
    run(
        9,
        "loss-signature correlation",
        min(10),
        || correlation(&desk),
        &mut failures,
    );
    run(
        10,
        "implicit weights",
        min(10),
        || implicit_weights(&desk),
        &mut failures,
    );
    run(
        11,
        "reproducibility",
        None,
        || reproducibility(&desk),
        &mut failures,
    );
    assert!(
        failures.is_empty(),
        "failed criteria:\n{}",
        failures.join("\n")
    );
}
