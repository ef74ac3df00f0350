//! The registered experiments. Each writes CSV (and SVG) outputs plus a run
//! manifest into its output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use icl_core::baselines::{ols_projected_inputs_trace, Baseline, BaselineConfig, PredictionTrace};
use icl_core::linalg::{gaussian_matrix, norm};
use icl_core::promptgen::{
    blend_input_prompt, blend_weight_prompt, make_subspace_pair, sample_batch,
};
use icl_core::rng::derive_seed;
use icl_core::spectra::{
    canonical_basis, canonical_projection_report, collect, loss_signature_correlation, mean_std,
    readout_alignment, signature_stats, signatures, spectrum_plot, spectrum_stats, svg::LinePlot,
    write_spectrum_csv, CanonicalBasis, RepresentationBatch, SignatureVector, SpectrumStats,
};
use icl_core::transformer::{implicit_weight, Params, StepRecord};
use icl_core::{ooddetect, Prompt, PromptDistribution, SubspacePair};

use crate::artifacts::{fmt, Artifacts, RunManifest};
use crate::config::{ExperimentConfig, Variant};
use crate::error::{config_err, HarnessError, Result};
use crate::eval::{baseline_traces, expected_y2, mse_curve, set_seed, transformer_traces};
use crate::registry::{load_or_train, model_spec, subspace_pair, vary_dim_model, ModelSpec};

/// Signature and readout coordinates reported per prompt.
pub const REPORT_RANK: usize = 10;
/// Normalized MSE below which a curve counts as exact recovery.
pub const EXACT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    InputRestriction,
    Blend,
    Spectra,
    OodDetector,
    ProjectionTables,
    Correlation,
    Noise,
    Scaling,
    ImplicitWeights,
    VaryDim,
    WeightRestriction,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Experiment::InputRestriction,
        Experiment::Blend,
        Experiment::Spectra,
        Experiment::OodDetector,
        Experiment::ProjectionTables,
        Experiment::Correlation,
        Experiment::Noise,
        Experiment::Scaling,
        Experiment::ImplicitWeights,
        Experiment::VaryDim,
        Experiment::WeightRestriction,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Experiment::InputRestriction => "exp_input_restriction",
            Experiment::Blend => "exp_blend",
            Experiment::Spectra => "exp_spectra",
            Experiment::OodDetector => "exp_ood_detector",
            Experiment::ProjectionTables => "exp_projection_tables",
            Experiment::Correlation => "exp_correlation",
            Experiment::Noise => "exp_noise",
            Experiment::Scaling => "exp_scaling",
            Experiment::ImplicitWeights => "exp_implicit_weights",
            Experiment::VaryDim => "exp_vary_dim",
            Experiment::WeightRestriction => "exp_weight_restriction",
        }
    }

    /// One-line summary of what an experiment measures.
    pub fn describe(self) -> &'static str {
        match self {
            Experiment::InputRestriction => {
                "Per-position MSE of T_par, T_full and baselines on D_par, D_perp, D_full"
            }
            Experiment::Blend => {
                "Final-position MSE vs blend t of the input (variant = input) or task-vector (variant = weight) subspace"
            }
            Experiment::Spectra => "Singular-value spectra and canonical-direction cosines",
            Experiment::OodDetector => "% of signatures inside the 95% Gaussian region fitted on S_par",
            Experiment::ProjectionTables => {
                "Canonical-plane projection norms and readout alignment"
            }
            Experiment::Correlation => "Pearson correlation of |C_p,:2|^2 and per-prompt MSE",
            Experiment::Noise => "Models trained with noisy labels, tested noiseless",
            Experiment::Scaling => "Final-position MSE vs input scale s",
            Experiment::ImplicitWeights => "Implicit-weight norms of P_A beta and P_B beta",
            Experiment::VaryDim => "Weight-restricted models at several q",
            Experiment::WeightRestriction => {
                "MSE curves and spectra of T_weight on D_weight_a, D_weight_b, D_full"
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.id() == s)
            .ok_or_else(|| HarnessError::UnknownExperiment(s.into()))
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Checkpoint cache; overrides the config key.
    pub checkpoint_dir: Option<PathBuf>,
    pub train_first: bool,
    pub threads: usize,
    /// Print training progress to stderr.
    pub verbose: bool,
}

impl RunOptions {
    pub fn new(out: &Path) -> Self {
        Self {
            out: out.to_path_buf(),
            checkpoint_dir: None,
            train_first: false,
            threads: 1,
            verbose: false,
        }
    }

    pub fn checkpoint_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.checkpoint_dir
            .clone()
            .or_else(|| cfg.checkpoint_dir.clone())
            .unwrap_or_else(|| {
                self.out
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join("checkpoints")
            })
    }
}

/// Progress printer for training runs.
pub fn progress(name: &str, verbose: bool) -> impl FnMut(&StepRecord) + '_ {
    let mut acc = (0.0, 0.0, 0usize);
    move |r: &StepRecord| {
        if !verbose {
            return;
        }
        acc = (acc.0 + r.loss, acc.1 + r.final_loss, acc.2 + 1);
        if (r.step + 1).is_multiple_of(500) {
            let n = acc.2 as f64;
            eprintln!(
                "[{name}] step {} loss {:.4} query {:.4} d_start {} k_start {}",
                r.step + 1,
                acc.0 / n,
                acc.1 / n,
                r.d_start,
                r.k_start
            );
            acc = (0.0, 0.0, 0);
        }
    }
}

/// Trains (or resumes) one registered model into the checkpoint cache.
pub fn train_model(name: &str, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    cfg.validate()?;
    let spec = model_spec(name, cfg)?;
    let (_, path) = load_or_train(
        &spec,
        &opts.checkpoint_dir(cfg),
        true,
        &mut progress(name, opts.verbose),
    )?;
    Ok(path)
}

pub fn run_experiment(
    exp: Experiment,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<RunManifest> {
    if let Some(id) = &cfg.experiment {
        if id != exp.id() {
            return Err(config_err(format!("config is for {id}, not {}", exp.id())));
        }
    }
    cfg.validate()?;
    let mut ctx = Ctx::new(cfg, opts)?;
    match exp {
        Experiment::InputRestriction => restriction(&mut ctx, Variant::Input)?,
        Experiment::WeightRestriction => {
            restriction(&mut ctx, Variant::Weight)?;
            spectra(&mut ctx, Variant::Weight)?;
        }
        Experiment::Blend => blend(&mut ctx)?,
        Experiment::Spectra => spectra(&mut ctx, cfg.variant)?,
        Experiment::OodDetector => ood_detector(&mut ctx)?,
        Experiment::ProjectionTables => projection_tables(&mut ctx)?,
        Experiment::Correlation => correlation(&mut ctx)?,
        Experiment::Noise => noise(&mut ctx)?,
        Experiment::Scaling => scaling(&mut ctx)?,
        Experiment::ImplicitWeights => implicit_weights(&mut ctx)?,
        Experiment::VaryDim => vary_dim(&mut ctx)?,
    }
    ctx.art.finish(exp.id(), cfg)
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    opts: &'a RunOptions,
    pair: SubspacePair,
    baseline_cfg: BaselineConfig,
    baselines: Vec<Baseline>,
    ckpt_dir: PathBuf,
    art: Artifacts,
    loaded: BTreeMap<String, Params<f32>>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a ExperimentConfig, opts: &'a RunOptions) -> Result<Self> {
        Ok(Self {
            cfg,
            opts,
            pair: subspace_pair(cfg)?,
            baseline_cfg: cfg.baseline_config(),
            baselines: cfg.baseline_list()?,
            ckpt_dir: opts.checkpoint_dir(cfg),
            art: Artifacts::create(&opts.out)?,
            loaded: BTreeMap::new(),
        })
    }

    fn dims(&self) -> (usize, usize, usize) {
        self.cfg.dims()
    }

    fn models_or(&self, default: &[&str]) -> Vec<String> {
        self.cfg
            .models
            .clone()
            .unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect())
    }

    fn spec(&self, name: &str) -> Result<ModelSpec> {
        model_spec(name, self.cfg)
    }

    fn model(&mut self, name: &str) -> Result<Params<f32>> {
        if let Some(p) = self.loaded.get(name) {
            return Ok(p.clone());
        }
        let spec = self.spec(name)?;
        let (params, path) = load_or_train(
            &spec,
            &self.ckpt_dir,
            self.opts.train_first,
            &mut progress(name, self.opts.verbose),
        )?;
        self.art.record_checkpoint(name, &path)?;
        self.loaded.insert(name.into(), params.clone());
        Ok(params)
    }

    fn batch(&self, dist: &PromptDistribution, n: usize, purpose: &str) -> Result<Vec<Prompt>> {
        Ok(sample_batch(
            dist,
            n,
            set_seed(self.cfg.seed, &format!("{purpose}:{}", dist.tag)),
        )?)
    }

    fn eval_prompts(&self, dist: &PromptDistribution) -> Result<Vec<Prompt>> {
        self.batch(dist, self.cfg.eval_batch, "eval")
    }

    /// Canonical basis of `params` on `dist`, from a pool disjoint from evaluation prompts.
    fn basis(&self, params: &Params<f32>, dist: &PromptDistribution) -> Result<CanonicalBasis> {
        let pool = self.batch(dist, self.cfg.pool_size, "pool")?;
        Ok(canonical_basis(
            &collect(params, &pool, &dist.tag)?,
            self.cfg.pool_size,
        )?)
    }

    fn representations(
        &self,
        params: &Params<f32>,
        dist: &PromptDistribution,
    ) -> Result<RepresentationBatch> {
        Ok(collect(params, &self.eval_prompts(dist)?, &dist.tag)?)
    }

    /// Traces of every model in `models` and every configured baseline.
    fn all_traces(
        &mut self,
        models: &[String],
        prompts: &[Prompt],
    ) -> Result<Vec<(String, Vec<PredictionTrace>)>> {
        let mut out = Vec::new();
        for name in models {
            let params = self.model(name)?;
            out.push((
                name.clone(),
                transformer_traces(&params, name, prompts, self.opts.threads)?,
            ));
        }
        for &b in &self.baselines {
            out.push((
                b.id().to_string(),
                baseline_traces(b, &self.baseline_cfg, prompts, self.opts.threads)?,
            ));
        }
        Ok(out)
    }
}

/// `D_par`, `D_perp`, `D_full` of a restriction variant.
pub fn eval_distributions(
    variant: Variant,
    pair: &SubspacePair,
    k: usize,
) -> [PromptDistribution; 3] {
    let d = pair.dim_ambient;
    match variant {
        Variant::Input => [
            PromptDistribution::input_restricted(d, k, &pair.p_a, "d_par"),
            PromptDistribution::input_restricted(d, k, &pair.p_b, "d_perp"),
            PromptDistribution::full(d, k),
        ],
        Variant::Weight => [
            PromptDistribution::weight_restricted(d, k, &pair.p_a, "d_weight_a"),
            PromptDistribution::weight_restricted(d, k, &pair.p_b, "d_weight_b"),
            PromptDistribution::full(d, k),
        ],
    }
}

/// First 1-based position from which every later normalized error is below [`EXACT_TOL`].
fn exact_from(normalized: &[f64]) -> Option<usize> {
    let tail = normalized
        .iter()
        .rev()
        .take_while(|&&e| e < EXACT_TOL)
        .count();
    (tail > 0).then(|| normalized.len() - tail + 1)
}

#[derive(Default)]
struct CurveTables {
    curves: Vec<Vec<String>>,
    finals: Vec<Vec<String>>,
}

impl CurveTables {
    const CURVE_HEADER: [&'static str; 5] =
        ["model", "distribution", "position", "mse", "normalized_mse"];
    const FINAL_HEADER: [&'static str; 5] = [
        "model",
        "distribution",
        "final_mse",
        "normalized_final_mse",
        "exact_from_position",
    ];

    fn add(&mut self, model: &str, dist: &str, ey2: f64, curve: &[f64]) {
        let normalized: Vec<f64> = curve.iter().map(|e| e / ey2).collect();
        for (i, (e, n)) in curve.iter().zip(&normalized).enumerate() {
            self.curves.push(vec![
                model.into(),
                dist.into(),
                (i + 1).to_string(),
                fmt(*e),
                fmt(*n),
            ]);
        }
        self.finals.push(vec![
            model.into(),
            dist.into(),
            fmt(*curve.last().expect("non-empty curve")),
            fmt(*normalized.last().expect("non-empty curve")),
            exact_from(&normalized)
                .map(|p| p.to_string())
                .unwrap_or_default(),
        ]);
    }

    fn write(&self, art: &mut Artifacts, prefix: &str) -> Result<()> {
        art.csv(
            &format!("{prefix}mse_curves.csv"),
            &Self::CURVE_HEADER,
            &self.curves,
        )?;
        art.csv(
            &format!("{prefix}final_mse.csv"),
            &Self::FINAL_HEADER,
            &self.finals,
        )
    }
}

fn positions(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64).collect()
}

/// Per-position MSE curves on the three distributions of a variant.
fn restriction(ctx: &mut Ctx, variant: Variant) -> Result<()> {
    let default: &[&str] = match variant {
        Variant::Input => &["t_par", "t_full"],
        Variant::Weight => &["t_weight", "t_full"],
    };
    let models = ctx.models_or(default);
    let (_, _, k) = ctx.dims();
    let mut tables = CurveTables::default();
    for dist in eval_distributions(variant, &ctx.pair, k) {
        let prompts = ctx.eval_prompts(&dist)?;
        let ey2 = expected_y2(&dist);
        let mut plot = LinePlot::new(
            &format!("MSE on {}", dist.tag),
            "position",
            "normalized MSE",
        )
        .log_y();
        for (label, traces) in ctx.all_traces(&models, &prompts)? {
            let curve = mse_curve(&traces)?;
            tables.add(&label, &dist.tag, ey2, &curve);
            plot = plot.with_series(
                &label,
                positions(curve.len()),
                curve.iter().map(|e| e / ey2).collect(),
                None,
            );
        }
        ctx.art
            .write(&format!("mse_{}.svg", dist.tag), plot.render().as_bytes())?;
    }
    tables.write(&mut ctx.art, "")
}

fn blend(ctx: &mut Ctx) -> Result<()> {
    let variant = ctx.cfg.variant;
    let model = match variant {
        Variant::Input => "t_par",
        Variant::Weight => "t_weight",
    };
    let models = ctx.models_or(&[model]);
    let (d, q, k) = ctx.dims();
    let base = set_seed(ctx.cfg.seed, &format!("blend:{variant:?}"));
    let mut rows = Vec::new();
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &t in &ctx.cfg.blend_grid {
        let prompts = (0..ctx.cfg.eval_batch)
            .map(|i| {
                let seed = derive_seed(base, &[i as u64]);
                match variant {
                    Variant::Input => blend_input_prompt(&ctx.pair, k, t, seed),
                    Variant::Weight => blend_weight_prompt(&ctx.pair, k, t, seed),
                }
            })
            .collect::<icl_core::Result<Vec<_>>>()?;
        let ey2 = (t * t * q as f64) + (1.0 - t) * (1.0 - t) * (d - q) as f64;
        let mut entries = Vec::new();
        for name in &models {
            let params = ctx.model(name)?;
            entries.push((
                name.clone(),
                transformer_traces(&params, name, &prompts, ctx.opts.threads)?,
            ));
        }
        entries.push((
            "ols".into(),
            baseline_traces(Baseline::Ols, &ctx.baseline_cfg, &prompts, ctx.opts.threads)?,
        ));
        let projected = prompts
            .iter()
            .map(|p| ols_projected_inputs_trace(p, &ctx.pair.p_a))
            .collect::<icl_core::Result<Vec<_>>>()?;
        entries.push(("ols_proj_inputs".into(), projected));
        for (label, traces) in entries {
            let e = *mse_curve(&traces)?.last().expect("non-empty prompt");
            rows.push(vec![fmt(t), label.clone(), fmt(e), fmt(e / ey2)]);
            series.entry(label).or_default().push(e / ey2);
        }
    }
    ctx.art.csv(
        "blend.csv",
        &["t", "model", "final_mse", "normalized_final_mse"],
        &rows,
    )?;
    let plot = series.into_iter().fold(
        LinePlot::new("final-position MSE vs blend", "t", "normalized MSE").log_y(),
        |p, (label, ys)| p.with_series(&label, ctx.cfg.blend_grid.clone(), ys, None),
    );
    ctx.art.write("blend.svg", plot.render().as_bytes())
}

fn truncated(sigs: &[SignatureVector]) -> Vec<SignatureVector> {
    sigs.iter()
        .map(|s| SignatureVector {
            c: s.c.iter().take(REPORT_RANK).copied().collect(),
            ..s.clone()
        })
        .collect()
}

fn spectra(ctx: &mut Ctx, variant: Variant) -> Result<()> {
    let default: &[&str] = match variant {
        Variant::Input => &["t_par", "t_full"],
        Variant::Weight => &["t_weight"],
    };
    let models = ctx.models_or(default);
    let (_, _, k) = ctx.dims();
    let dists = eval_distributions(variant, &ctx.pair, k);
    let mut summary = Vec::new();
    for name in &models {
        let params = ctx.model(name)?;
        let mut stats: Vec<SpectrumStats> = Vec::new();
        let mut sig_plot = LinePlot::new(&format!("canonical alignment, {name}"), "index", "|cos|");
        for dist in &dists {
            let basis = ctx.basis(&params, dist)?;
            let batch = ctx.representations(&params, dist)?;
            stats.push(spectrum_stats(&batch)?);
            let sigs = truncated(&signatures(&batch, &basis)?);
            ctx.art
                .write_with(&format!("signatures_{name}_{}.csv", dist.tag), |buf| {
                    Ok(icl_core::spectra::write_signatures_csv(
                        buf, &dist.tag, &sigs,
                    )?)
                })?;
            let (mean, std) = signature_stats(&sigs);
            for (j, (m, s)) in mean.iter().zip(&std).enumerate() {
                summary.push(vec![
                    name.clone(),
                    dist.tag.clone(),
                    (j + 1).to_string(),
                    fmt(*m),
                    fmt(*s),
                ]);
            }
            sig_plot = sig_plot.with_series(&dist.tag, positions(mean.len()), mean, Some(std));
        }
        let refs: Vec<&SpectrumStats> = stats.iter().collect();
        ctx.art.write_with(&format!("spectrum_{name}.csv"), |buf| {
            Ok(write_spectrum_csv(buf, &refs)?)
        })?;
        let plot = spectrum_plot(&format!("singular values, {name}"), &refs);
        ctx.art
            .write(&format!("spectrum_{name}.svg"), plot.render().as_bytes())?;
        ctx.art.write(
            &format!("signature_{name}.svg"),
            sig_plot.render().as_bytes(),
        )?;
    }
    ctx.art.csv(
        "signature_summary.csv",
        &["model", "source", "index", "mean_cos", "std_cos"],
        &summary,
    )
}

fn ood_detector(ctx: &mut Ctx) -> Result<()> {
    let variant = ctx.cfg.variant;
    let default: &[&str] = match variant {
        Variant::Input => &["t_par", "t_full"],
        Variant::Weight => &["t_weight"],
    };
    let models = ctx.models_or(default);
    let (_, _, k) = ctx.dims();
    let [id_dist, ood_dist, _] = eval_distributions(variant, &ctx.pair, k);
    let det = ctx.cfg.detector_config();
    let (mut table, mut trials) = (Vec::new(), Vec::new());
    for name in &models {
        let params = ctx.model(name)?;
        let basis = ctx.basis(&params, &id_dist)?;
        let seed = set_seed(ctx.cfg.seed, &format!("detector:{name}"));
        let (id, ood) =
            ooddetect::detector_trial(&params, &basis, &id_dist, &ood_dist, &det, seed)?;
        for r in [&id, &ood] {
            table.push(vec![
                name.clone(),
                r.fit_source.clone(),
                r.source.clone(),
                fmt(r.inclusion_pct_mean),
                fmt(r.inclusion_pct_std),
                r.trials.to_string(),
                r.fit_size.to_string(),
                r.eval_size.to_string(),
                r.degenerate_fits.to_string(),
            ]);
            for (t, pct) in r.per_trial.iter().enumerate() {
                trials.push(vec![
                    name.clone(),
                    r.source.clone(),
                    t.to_string(),
                    fmt(*pct),
                ]);
            }
        }
    }
    ctx.art.csv(
        "ood_detector.csv",
        &[
            "model",
            "fit_source",
            "eval_source",
            "inclusion_pct_mean",
            "inclusion_pct_std",
            "trials",
            "fit_size",
            "eval_size",
            "degenerate_fits",
        ],
        &table,
    )?;
    ctx.art.csv(
        "ood_detector_trials.csv",
        &["model", "eval_source", "trial", "inclusion_pct"],
        &trials,
    )
}

fn projection_tables(ctx: &mut Ctx) -> Result<()> {
    let models = ctx.models_or(&["t_par", "t_full"]);
    let (_, _, k) = ctx.dims();
    let [par, perp, _] = eval_distributions(Variant::Input, &ctx.pair, k);
    let (mut norms, mut align) = (Vec::new(), Vec::new());
    for name in &models {
        let params = ctx.model(name)?;
        let (f, _) = params.readout();
        let own = ctx.spec(name)?.dist;
        let basis = ctx.basis(&params, &own)?;
        let rep = canonical_projection_report(&ctx.representations(&params, &own)?, &basis, &f)?;
        norms.push(vec![
            name.clone(),
            rep.source.clone(),
            fmt(rep.norm_ratio),
            fmt(rep.mse),
        ]);
        for dist in [&par, &perp] {
            let a = readout_alignment(&ctx.representations(&params, dist)?, &f)?;
            align.push(vec![
                name.clone(),
                a.source.clone(),
                fmt(a.top2.0),
                fmt(a.top2.1),
                fmt(a.next8.0),
                fmt(a.next8.1),
            ]);
        }
    }
    ctx.art.csv(
        "projection_norms.csv",
        &["model", "source", "norm_ratio", "projected_mse"],
        &norms,
    )?;
    ctx.art.csv(
        "readout_alignment.csv",
        &[
            "model",
            "source",
            "top2_mean",
            "top2_std",
            "next8_mean",
            "next8_std",
        ],
        &align,
    )
}

fn correlation(ctx: &mut Ctx) -> Result<()> {
    let models = ctx.models_or(&["t_par"]);
    let (_, _, k) = ctx.dims();
    let [par, perp, _] = eval_distributions(ctx.cfg.variant, &ctx.pair, k);
    let (mut scatter, mut fits) = (Vec::new(), Vec::new());
    for name in &models {
        let params = ctx.model(name)?;
        let (mut sigs, mut losses) = (Vec::new(), Vec::new());
        for dist in [&par, &perp] {
            let prompts = ctx.eval_prompts(dist)?;
            let basis = ctx.basis(&params, dist)?;
            let s = signatures(&collect(&params, &prompts, &dist.tag)?, &basis)?;
            let traces = transformer_traces(&params, name, &prompts, ctx.opts.threads)?;
            for (sig, tr) in s.into_iter().zip(&traces) {
                scatter.push(vec![
                    name.clone(),
                    dist.tag.clone(),
                    sig.prompt.seed.to_string(),
                    fmt(sig.top2_norm_sq()),
                    fmt(tr.mean_error()),
                ]);
                losses.push(tr.mean_error());
                sigs.push(sig);
            }
        }
        let c = loss_signature_correlation(&sigs, &losses)?;
        let xs: Vec<f64> = sigs.iter().map(|s| s.top2_norm_sq()).collect();
        let (mx, my) = (mean_std(&xs).0, mean_std(&losses).0);
        let sxy: f64 = xs
            .iter()
            .zip(&losses)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        fits.push(vec![
            name.clone(),
            fmt(c.r),
            fmt(c.p_value),
            c.pairs.to_string(),
            fmt(slope),
            fmt(my - slope * mx),
        ]);
    }
    ctx.art.csv(
        "correlation_scatter.csv",
        &["model", "source", "prompt_seed", "c2_norm_sq", "mean_mse"],
        &scatter,
    )?;
    ctx.art.csv(
        "correlation.csv",
        &["model", "r", "p_value", "pairs", "slope", "intercept"],
        &fits,
    )
}

fn noise(ctx: &mut Ctx) -> Result<()> {
    if ctx.cfg.noise_sigma.is_none() {
        return Err(config_err("exp_noise needs noise_sigma"));
    }
    // Two panels: full-space models on D_full, and the noisy D_par model on D_par and D_perp.
    let full_models = ctx.models_or(&["t_full_noisy", "t_full"]);
    let par_models = ctx.models_or(&["t_par_noisy"]);
    let (_, _, k) = ctx.dims();
    let [par, perp, full] = eval_distributions(Variant::Input, &ctx.pair, k);
    let mut tables = CurveTables::default();
    let panels = [(full_models, vec![full]), (par_models, vec![par, perp])];
    for (models, dists) in &panels {
        for dist in dists {
            let prompts = ctx.eval_prompts(dist)?;
            for (label, traces) in ctx.all_traces(models, &prompts)? {
                tables.add(&label, &dist.tag, expected_y2(dist), &mse_curve(&traces)?);
            }
        }
    }
    tables.write(&mut ctx.art, "")
}

fn scaling(ctx: &mut Ctx) -> Result<()> {
    let models = ctx.models_or(&["t_full", "t_full_multiscale"]);
    let (d, _, k) = ctx.dims();
    let mut rows = Vec::new();
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &s in &ctx.cfg.scales {
        let dist = PromptDistribution::full(d, k).with_scale(s);
        let prompts = ctx.batch(&dist, ctx.cfg.eval_batch, &format!("scale:{s}"))?;
        let ey2 = expected_y2(&dist);
        for (label, traces) in ctx.all_traces(&models, &prompts)? {
            let e = *mse_curve(&traces)?.last().expect("non-empty prompt");
            rows.push(vec![fmt(s), label.clone(), fmt(e), fmt(e / ey2)]);
            series.entry(label).or_default().push(e);
        }
    }
    ctx.art.csv(
        "scaling.csv",
        &["scale", "model", "final_mse", "normalized_final_mse"],
        &rows,
    )?;
    let plot = series.into_iter().fold(
        LinePlot::new("final-position MSE vs input scale", "s", "MSE").log_y(),
        |p, (label, ys)| p.with_series(&label, ctx.cfg.scales.clone(), ys, None),
    );
    ctx.art.write("scaling.svg", plot.render().as_bytes())
}

fn implicit_weights(ctx: &mut Ctx) -> Result<()> {
    let models = ctx.models_or(&["t_weight"]);
    let (d, _, _) = ctx.dims();
    let n_queries = ctx.cfg.implicit_queries.unwrap_or(4 * d);
    let (mut per_prompt, mut summary) = (Vec::new(), Vec::new());
    for name in &models {
        let params = ctx.model(name)?;
        let dist = ctx.spec(name)?.dist;
        let contexts = ctx.batch(&dist, ctx.cfg.implicit_prompts, "implicit")?;
        let (mut na, mut nb) = (Vec::new(), Vec::new());
        let mut deficient = 0;
        for p in &contexts {
            let queries = gaussian_matrix(n_queries, d, derive_seed(p.meta.seed, &[1]));
            let iw = implicit_weight(&params, p, &queries)?;
            let a = norm(&ctx.pair.p_a.matvec(&iw.beta));
            let b = norm(&ctx.pair.p_b.matvec(&iw.beta));
            deficient += iw.rank_deficient as usize;
            per_prompt.push(vec![
                name.clone(),
                p.meta.seed.to_string(),
                fmt(a),
                fmt(b),
                iw.rank_deficient.to_string(),
            ]);
            na.push(a);
            nb.push(b);
        }
        let (ma, sa) = mean_std(&na);
        let (mb, sb) = mean_std(&nb);
        summary.push(vec![
            name.clone(),
            contexts.len().to_string(),
            fmt(ma),
            fmt(sa * sa),
            fmt(mb),
            fmt(sb * sb),
            deficient.to_string(),
        ]);
    }
    ctx.art.csv(
        "implicit_weights.csv",
        &[
            "model",
            "prompt_seed",
            "norm_p_a",
            "norm_p_b",
            "rank_deficient",
        ],
        &per_prompt,
    )?;
    ctx.art.csv(
        "implicit_weights_summary.csv",
        &[
            "model",
            "prompts",
            "mean_norm_p_a",
            "var_norm_p_a",
            "mean_norm_p_b",
            "var_norm_p_b",
            "rank_deficient",
        ],
        &summary,
    )
}

fn vary_dim(ctx: &mut Ctx) -> Result<()> {
    let (d, _, k) = ctx.dims();
    let mut tables = CurveTables::default();
    let mut plateau = Vec::new();
    for q in ctx.cfg.vary_q() {
        let name = vary_dim_model(ctx.cfg, q);
        let pair = make_subspace_pair(d, q, ctx.cfg.pair_seed)?;
        let dists = [
            PromptDistribution::weight_restricted(d, k, &pair.p_a, &format!("d_weight_a_q{q}")),
            PromptDistribution::weight_restricted(d, k, &pair.p_b, &format!("d_weight_b_q{q}")),
        ];
        for dist in &dists {
            let prompts = ctx.eval_prompts(dist)?;
            let ey2 = expected_y2(dist);
            for (label, traces) in ctx.all_traces(std::slice::from_ref(&name), &prompts)? {
                let curve = mse_curve(&traces)?;
                tables.add(&label, &dist.tag, ey2, &curve);
                let at = |pos: usize| curve.get(pos - 1).map(|e| fmt(e / ey2)).unwrap_or_default();
                plateau.push(vec![
                    q.to_string(),
                    label,
                    dist.tag.clone(),
                    at(q),
                    at(q + 1),
                    at(curve.len()),
                ]);
            }
        }
    }
    tables.write(&mut ctx.art, "")?;
    ctx.art.csv(
        "plateau.csv",
        &[
            "q",
            "model",
            "distribution",
            "normalized_mse_at_q",
            "normalized_mse_at_q_plus_1",
            "normalized_final_mse",
        ],
        &plateau,
    )
}
