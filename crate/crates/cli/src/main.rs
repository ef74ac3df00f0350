use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Parser;
use icl_spectra::config::Preset;
use icl_spectra::registry::MODEL_NAMES;
use icl_spectra::{run_experiment, train_model, Experiment, ExperimentConfig, RunOptions};

/// Output root used when `--out` is not given.
const OUT_ENV: &str = "ICL_SPECTRA_OUT";

fn experiment_list() -> String {
    let mut s = String::from("Experiments:\n");
    for e in Experiment::ALL {
        s.push_str(&format!("  {:<24} {}\n", e.id(), e.describe()));
    }
    s.push_str(&format!(
        "\nOther targets:\n  {:<24} train a registered model ({}, t_weight_q<N>)\n  {:<24} print this list\n",
        "train <model>",
        MODEL_NAMES.join(", "),
        "list"
    ));
    s
}

#[derive(Parser, Debug)]
#[command(
    name = "icl-spectra",
    version,
    about = "In-context regression generalization and spectral-signature experiments"
)]
#[command(after_help = experiment_list())]
struct Cli {
    /// Experiment id, `train` or `list`.
    target: String,
    /// Model name for `train`.
    model: Option<String>,
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train missing checkpoints instead of failing.
    #[arg(long)]
    train_first: bool,
    /// Evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    /// Output directory; defaults to `$ICL_SPECTRA_OUT/<experiment>` or `results/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint cache directory; defaults to `<out>/../checkpoints`.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Threads used for prompt evaluation.
    #[arg(long, default_value_t = 1)]
    parallel_eval: usize,
    /// Suppress training progress.
    #[arg(long)]
    quiet: bool,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if cli.target == "list" {
        print!("{}", experiment_list());
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = &cli.preset {
        cfg.preset = Preset::parse(p)?;
    }
    let run_name = match (&cli.target[..], &cli.model) {
        ("train", Some(m)) => format!("train_{m}"),
        ("train", None) => bail!("train needs a model name"),
        (t, _) => t.to_string(),
    };
    let out = cli.out.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("results"))
            .join(&run_name)
    });
    let opts = RunOptions {
        checkpoint_dir: cli.checkpoint_dir.clone(),
        train_first: cli.train_first,
        threads: cli.parallel_eval.max(1),
        verbose: !cli.quiet,
        ..RunOptions::new(&out)
    };
    if cli.target == "train" {
        let model = cli.model.as_deref().unwrap_or_default();
        let path = train_model(model, &cfg, &opts)?;
        println!("{}", path.display());
        return Ok(());
    }
    let exp = Experiment::parse(&cli.target)?;
    let manifest = run_experiment(exp, &cfg, &opts)?;
    for name in manifest.outputs.keys() {
        println!("{}", out.join(name).display());
    }
    println!("{}", out.join(icl_spectra::artifacts::MANIFEST).display());
    Ok(())
}
